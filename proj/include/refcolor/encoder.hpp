#pragma once

#include <memory>
#include <string>
#include <vector>

#include "refcolor/raster.hpp"

namespace refcolor {

// Fixed-dimension image embedding. Values are kept as produced by the
// encoder; normalization happens inside cosine_similarity.
struct Embedding {
    std::vector<double> values;
    int dim() const { return static_cast<int>(values.size()); }
};

// Pluggable whole-image encoder. Implementations resample internally to
// their fixed input size, so any raster dimensions are accepted.
// encode() must be deterministic and safe to call from multiple threads.
class ImageEncoder {
public:
    virtual ~ImageEncoder() = default;
    virtual std::string id() const = 0;
    virtual int dim() const = 0;
    virtual int input_size() const = 0;
    virtual Embedding encode(const Raster& img) const = 0;
};

// Dependency-free default: resample to 32x32, concatenate an 8-bin color
// histogram per RGB channel (24 dims) with a 4x4 mean-pooled luma grid
// (16 dims), then L2-normalize. d = 40. Gray inputs are replicated to RGB.
class ToyEncoder final : public ImageEncoder {
public:
    std::string id() const override { return "toy-hist-luma-v1"; }
    int dim() const override { return 40; }
    int input_size() const override { return 32; }
    Embedding encode(const Raster& img) const override;
};

// Adapter slot for externally trained encoders: a file supplies an id, the
// input size, and a dense linear map from resampled RGB pixels to the
// embedding. Lets real contrastive-encoder projections be dropped in
// without linking any inference runtime.
class LinearMapEncoder final : public ImageEncoder {
public:
    static LinearMapEncoder load(const std::string& path);
    static void save(const LinearMapEncoder& enc, const std::string& path);

    LinearMapEncoder(std::string id, int input_size, int dim, std::vector<float> weights);

    std::string id() const override { return id_; }
    int dim() const override { return dim_; }
    int input_size() const override { return input_size_; }
    Embedding encode(const Raster& img) const override;

private:
    std::string id_;
    int input_size_ = 0;
    int dim_ = 0;
    std::vector<float> weights_;  // dim x (3 * input_size^2), row-major
};

// Factory behind the CLI `--encoder` option: "toy" or "linear:<path>".
std::shared_ptr<const ImageEncoder> make_encoder(const std::string& choice);

// S(a, b) = a.b / (|a| |b|). Throws on dimension mismatch or zero norm.
double cosine_similarity(const Embedding& a, const Embedding& b);

}  // namespace refcolor
