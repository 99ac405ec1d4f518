#pragma once

#include <array>
#include <optional>
#include <string>

#include "refcolor/autoencoder.hpp"
#include "refcolor/colorizer.hpp"

namespace refcolor {

// Guided super-resolution: a shared encoder E runs over the high-res
// grayscale page and the upsampled low-res color; per-scale fusion blocks
// F combine both feature streams and feed the decoder D's skip inputs,
// while the decoder's main input is E(bw). Fusion outputs are zero at
// initialization, so an untrained bundle reduces to the plain autoencoder
// path on the grayscale image.
struct SrBundleConfig {
    AutoencoderConfig ae;
    int scale_factor = 2;  // bw_high dims = factor * color_low dims
    // Eq-of-record ambiguity: the printed reconstruction target is the
    // grayscale input, which cannot supervise color; default trains against
    // the color ground truth. "bw" selects the printed form.
    std::string l1_target = "color";  // "color" | "bw"
    uint64_t init_seed = 23;

    std::string to_json() const;
    static SrBundleConfig from_json(const std::string& json);
};

class SrBundle {
public:
    explicit SrBundle(const SrBundleConfig& cfg);

    const SrBundleConfig& cfg() const { return cfg_; }
    Autoencoder& ae() { return ae_; }
    const Autoencoder& ae() const { return ae_; }

    // Warm start from the diffusion stage's autoencoder weights.
    void init_from_autoencoder(const Autoencoder& src);

    // Fusion of the two per-scale feature streams; final convs zero-init.
    std::array<nn::Value, 3> fuse(const std::array<nn::Value, 3>& bw_feats,
                                  const std::array<nn::Value, 3>& color_feats) const;

    nn::ParamList params() const;  // encoder + decoder + fusion
    int steps_trained = 0;

    void save(const std::string& path) const;
    static SrBundle load(const std::string& path, const std::string& expected_config_json = "");

private:
    struct Fusion {
        nn::Conv2d mix;   // 2C -> C
        nn::Conv2d out;   // C -> C, zero-init
    };

    SrBundleConfig cfg_;
    Autoencoder ae_;
    std::array<Fusion, 3> fusion_;
};

// High-res colorization: output dims = bw_high dims, 3 channels.
// bw_high dims must be an integer multiple (cfg.scale_factor) of color_low
// dims and divisible by 8.
Raster super_resolve(const Raster& bw_high, const Raster& color_low, const SrBundle& bundle);

// L1 update over one batch of (bw_high, color_low, target) crops.
double sr_training_step(SrBundle& bundle, nn::Adam& opt, const std::vector<Raster>& bw_high,
                        const std::vector<Raster>& color_low,
                        const std::vector<Raster>& color_high_gt);

// Simulates the colorization stage's low-res output: downsample by k, then
// an encode/decode round trip through the frozen autoencoder. seed drives
// the stochastic VAE latent draw; ae == nullptr bypasses the round trip
// (k = 1 then yields the identity).
Raster degrade_for_sr(const Raster& color_high, int k, uint64_t sim_decode_noise,
                      const Autoencoder* ae);

struct SrTrainConfig {
    int steps = 500;
    int batch = 4;
    int crop = 64;  // high-res crop size (divisible by 8 * scale_factor)
    double lr = 2e-3;
    uint64_t seed = 3;
};

// Training pairs come from the chapter's color pages: crop -> degrade ->
// upsample path inside sr_training_step. Returns per-step losses.
std::vector<double> train_gsrp(SrBundle& bundle, const ChapterManifest& manifest,
                               const Autoencoder* degrade_ae, const SrTrainConfig& cfg);

}  // namespace refcolor
