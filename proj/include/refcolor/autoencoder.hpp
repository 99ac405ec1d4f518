#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "refcolor/nn/layers.hpp"
#include "refcolor/raster.hpp"

namespace refcolor {

// Conv autoencoder, downsample factor 8, 4 latent channels. The encoder
// emits mean and logvar; eval-mode encoding uses the mean only so it is
// deterministic. Encoder blocks also expose per-scale features (full, 1/2,
// 1/4 resolution) which the guided super-resolution stage taps into.
struct AutoencoderConfig {
    int image_channels = 3;
    int latent_channels = 4;
    std::array<int, 3> stage_channels = {16, 32, 64};
    int norm_groups = 8;
    static constexpr int kDownsample = 8;
    static constexpr int kScales = 3;  // feature scales: 1, 1/2, 1/4

    std::string id_string() const;
};

struct EncoderOut {
    nn::Value mean;                      // (N,4,H/8,W/8)
    nn::Value logvar;                    // (N,4,H/8,W/8)
    std::array<nn::Value, 3> features;   // per-scale, coarse fusion inputs
};

class Autoencoder {
public:
    Autoencoder() = default;
    Autoencoder(const AutoencoderConfig& cfg, Rng& rng);

    EncoderOut encode(const nn::Value& x) const;
    // skips: optional per-scale additive features for the decoder (same
    // ordering as EncoderOut::features); used by the SR pipeline.
    nn::Value decode(const nn::Value& z, const std::array<nn::Value, 3>* skips = nullptr) const;

    void params(nn::ParamList& out, const std::string& prefix) const;
    void copy_from(const Autoencoder& src);

    const AutoencoderConfig& config() const { return cfg_; }

    // ---- raster convenience (eval mode, no gradients kept) ----
    // Deterministic latent (mean channel); dims must be divisible by 8.
    nn::Tensor encode_raster(const Raster& img) const;
    Raster decode_to_raster(const nn::Tensor& z) const;

    static nn::Tensor raster_to_tensor(const Raster& img);          // (1,3,H,W)
    static Raster tensor_to_raster(const nn::Tensor& t, int n = 0); // clamped to [0,1]

private:
    AutoencoderConfig cfg_;
    // encoder
    nn::Conv2d e_in_;
    nn::Conv2d e_s0_;  // full res
    nn::Conv2d e_d0_;
    nn::Conv2d e_s1_;  // 1/2
    nn::Conv2d e_d1_;
    nn::Conv2d e_s2_;  // 1/4
    nn::Conv2d e_d2_;
    nn::Conv2d e_bott_;
    nn::Conv2d e_out_;  // -> 2*latent (mean || logvar)
    nn::GroupNorm e_gn0_, e_gn1_, e_gn2_, e_gnb_;
    // decoder
    nn::Conv2d d_in_;
    nn::Conv2d d_s2_;  // 1/4 after first upsample
    nn::Conv2d d_s1_;  // 1/2
    nn::Conv2d d_s0_;  // full
    nn::Conv2d d_out_;
    nn::GroupNorm d_gni_, d_gn2_, d_gn1_, d_gn0_;
};

}  // namespace refcolor
