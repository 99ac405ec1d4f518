#include "refcolor/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "refcolor/errors.hpp"
#include "refcolor/imaging.hpp"

namespace refcolor {

Embedding ToyEncoder::encode(const Raster& img) const {
    Raster rgb = resample(img.to_rgb(), input_size(), input_size());

    Embedding e;
    e.values.assign(40, 0.0);
    const double inv_n = 1.0 / static_cast<double>(rgb.pixel_count());

    // 8-bin histogram per channel, mass-normalized.
    for (size_t i = 0; i < rgb.pixel_count(); ++i) {
        for (int c = 0; c < 3; ++c) {
            int bin = std::min(7, static_cast<int>(rgb.data()[i * 3 + c] * 8.0));
            e.values[c * 8 + bin] += inv_n;
        }
    }

    // 4x4 mean-pooled luma grid of the 32x32 thumbnail.
    Raster luma = to_grayscale(rgb);
    const int cell = input_size() / 4;
    for (int gy = 0; gy < 4; ++gy) {
        for (int gx = 0; gx < 4; ++gx) {
            double sum = 0.0;
            for (int y = gy * cell; y < (gy + 1) * cell; ++y)
                for (int x = gx * cell; x < (gx + 1) * cell; ++x) sum += luma.at(x, y);
            e.values[24 + gy * 4 + gx] = sum / (cell * cell);
        }
    }

    double norm = 0.0;
    for (double v : e.values) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0.0)
        for (double& v : e.values) v /= norm;
    return e;
}

LinearMapEncoder::LinearMapEncoder(std::string id, int input_size, int dim,
                                   std::vector<float> weights)
    : id_(std::move(id)), input_size_(input_size), dim_(dim), weights_(std::move(weights)) {
    if (input_size_ < 1 || dim_ < 1)
        throw InvalidArgument("LinearMapEncoder: bad dimensions");
    if (weights_.size() != static_cast<size_t>(dim_) * 3 * input_size_ * input_size_)
        throw InvalidArgument("LinearMapEncoder: weight size mismatch");
}

Embedding LinearMapEncoder::encode(const Raster& img) const {
    Raster rgb = resample(img.to_rgb(), input_size_, input_size_);
    const size_t n = rgb.data().size();
    Embedding e;
    e.values.assign(dim_, 0.0);
    for (int d = 0; d < dim_; ++d) {
        const float* row = &weights_[static_cast<size_t>(d) * n];
        double acc = 0.0;
        for (size_t i = 0; i < n; ++i) acc += static_cast<double>(row[i]) * rgb.data()[i];
        e.values[d] = acc;
    }
    return e;
}

namespace {
constexpr char kEncoderMagic[8] = {'R', 'C', 'L', 'E', 'N', 'C', '0', '1'};
}

void LinearMapEncoder::save(const LinearMapEncoder& enc, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("LinearMapEncoder::save: cannot open " + path);
    f.write(kEncoderMagic, 8);
    uint32_t id_len = static_cast<uint32_t>(enc.id_.size());
    uint32_t in_size = static_cast<uint32_t>(enc.input_size_);
    uint32_t dim = static_cast<uint32_t>(enc.dim_);
    f.write(reinterpret_cast<const char*>(&id_len), 4);
    f.write(enc.id_.data(), id_len);
    f.write(reinterpret_cast<const char*>(&in_size), 4);
    f.write(reinterpret_cast<const char*>(&dim), 4);
    f.write(reinterpret_cast<const char*>(enc.weights_.data()),
            static_cast<std::streamsize>(enc.weights_.size() * sizeof(float)));
    if (!f) throw IoError("LinearMapEncoder::save: write failed for " + path);
}

LinearMapEncoder LinearMapEncoder::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("LinearMapEncoder::load: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kEncoderMagic, 8) != 0)
        throw IoError("LinearMapEncoder::load: bad magic in " + path);
    uint32_t id_len = 0, in_size = 0, dim = 0;
    f.read(reinterpret_cast<char*>(&id_len), 4);
    if (!f || id_len > 4096) throw IoError("LinearMapEncoder::load: corrupt header");
    std::string id(id_len, '\0');
    f.read(id.data(), id_len);
    f.read(reinterpret_cast<char*>(&in_size), 4);
    f.read(reinterpret_cast<char*>(&dim), 4);
    if (!f) throw IoError("LinearMapEncoder::load: truncated header");
    std::vector<float> w(static_cast<size_t>(dim) * 3 * in_size * in_size);
    f.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(float)));
    if (!f) throw IoError("LinearMapEncoder::load: truncated weights");
    return LinearMapEncoder(std::move(id), static_cast<int>(in_size), static_cast<int>(dim),
                            std::move(w));
}

std::shared_ptr<const ImageEncoder> make_encoder(const std::string& choice) {
    if (choice == "toy") return std::make_shared<ToyEncoder>();
    if (choice.rfind("linear:", 0) == 0)
        return std::make_shared<LinearMapEncoder>(LinearMapEncoder::load(choice.substr(7)));
    throw InvalidArgument("unknown encoder '" + choice + "' (expected 'toy' or 'linear:<path>')");
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim() || a.dim() == 0)
        throw InvalidArgument("cosine_similarity: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < a.dim(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw NumericError("cosine_similarity: zero-norm embedding");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace refcolor
