#pragma once

#include <array>
#include <memory>
#include <optional>

#include "refcolor/nn/layers.hpp"

namespace refcolor {

// Envelope of the denoising network. Desk scale: 3 levels, base 32,
// multipliers (1,2,4), self-attention at the deepest level only.
// The conditioning branch consumes latent(4) + latent(4) + mask(1) = 9
// channels; the base network consumes the 4 noise-latent channels.
struct DenoiserConfig {
    int latent_channels = 4;
    int base_channels = 32;
    std::array<int, 3> channel_mult = {1, 2, 4};
    int cond_channels = 9;
    int norm_groups = 8;
    int temb_dim = 64;

    std::string id_string() const;
};

namespace detail {

struct ResBlock {
    nn::GroupNorm gn1, gn2;
    nn::Conv2d conv1, conv2;
    nn::Linear temb_proj;
    std::optional<nn::Conv2d> skip;  // 1x1 when channel count changes

    ResBlock() = default;
    ResBlock(int cin, int cout, int temb_dim, int groups, Rng& rng);
    nn::Value forward(const nn::Value& x, const nn::Value& temb) const;
    void params(nn::ParamList& out, const std::string& prefix) const;
    void copy_from(const ResBlock& src);
};

struct AttentionBlock {
    nn::GroupNorm norm;
    nn::Conv2d q, k, v, proj;  // 1x1 projections
    // Low-rank adapters; null until the colorization stage attaches them.
    std::shared_ptr<nn::LoRAAdapter> lora_q, lora_k, lora_v, lora_proj;

    AttentionBlock() = default;
    AttentionBlock(int channels, int groups, Rng& rng);
    nn::Value forward(const nn::Value& x, bool apply_lora) const;
    void params(nn::ParamList& out, const std::string& prefix) const;
    void attach_lora(int rank, double alpha, Rng& rng);
    void lora_params(nn::ParamList& out, const std::string& prefix) const;
};

}  // namespace detail

// Tiny denoising UNet. Injection points (conditioning features added by the
// guider branch): after conv_in, after each encoder ResBlock, after the
// deepest level's attention, after the middle block - five in total, all on
// the encoder/middle path.
class UNet {
public:
    static constexpr int kInjectionPoints = 5;

    UNet() = default;
    UNet(const DenoiserConfig& cfg, Rng& rng);

    // z: (N, latent_channels, H, W) with H, W divisible by 4. t_steps: one
    // schedule step per sample. injections, when present, holds the five
    // per-point feature maps to add.
    nn::Value forward(const nn::Value& z, const std::vector<int>& t_steps,
                      const std::vector<nn::Value>* injections, bool apply_lora) const;

    // Same, with a precomputed time embedding (shared with the guider).
    nn::Value forward_with_temb(const nn::Value& z, const nn::Value& temb,
                                const std::vector<nn::Value>* injections, bool apply_lora) const;

    // Sinusoidal embedding -> 2-layer MLP; shared with the guider branch.
    nn::Value time_embedding(const std::vector<int>& t_steps) const;

    void params(nn::ParamList& out, const std::string& prefix) const;
    void attach_lora(int rank, double alpha, Rng& rng);
    void lora_params(nn::ParamList& out, const std::string& prefix) const;

    const DenoiserConfig& config() const { return cfg_; }

    // Channel width at each injection point.
    std::array<int, kInjectionPoints> injection_channels() const;

private:
    friend class Guider;

    DenoiserConfig cfg_;
    nn::Linear temb_fc1_, temb_fc2_;
    nn::Conv2d conv_in_;
    detail::ResBlock rb0_;
    nn::Conv2d down1_;
    detail::ResBlock rb1_;
    nn::Conv2d down2_;
    detail::ResBlock rb2_;
    detail::AttentionBlock attn_;
    detail::ResBlock mid_;
    nn::Conv2d up1_;
    detail::ResBlock dec1_;
    nn::Conv2d up2_;
    detail::ResBlock dec2_;
    nn::GroupNorm out_norm_;
    nn::Conv2d conv_out_;
};

// Conditioning branch: mirrors the UNet's convolutional encoder/middle
// stack (weights replicated at construction), consumes the 9-channel
// concatenated conditioning, and emits five zero-initialized projections
// of its features for injection into the UNet.
class Guider {
public:
    Guider() = default;

    // Mirrors conv weights from the UNet. The 9-channel input adapter gets
    // the UNet's conv_in weights in the Z_t slice (channels 5..8) and zeros
    // elsewhere; all output projections start at zero.
    static Guider build(const UNet& unet, Rng& rng);

    std::vector<nn::Value> forward(const nn::Value& cond9, const nn::Value& temb) const;

    void params(nn::ParamList& out, const std::string& prefix) const;

    const nn::Conv2d& adapter() const { return adapter_; }
    const std::array<nn::Conv2d, UNet::kInjectionPoints>& projections() const { return proj_; }
    // Mirrored conv handles paired with their UNet sources, for the
    // replication checks.
    std::vector<std::pair<const nn::Conv2d*, const nn::Conv2d*>> mirrored_convs(
        const UNet& unet) const;

private:
    nn::Conv2d adapter_;
    detail::ResBlock rb0_;
    nn::Conv2d down1_;
    detail::ResBlock rb1_;
    nn::Conv2d down2_;
    detail::ResBlock rb2_;
    detail::ResBlock mid_;
    std::array<nn::Conv2d, UNet::kInjectionPoints> proj_;
};

}  // namespace refcolor
