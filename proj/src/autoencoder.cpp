#include "refcolor/autoencoder.hpp"

#include <algorithm>

#include "refcolor/errors.hpp"

namespace refcolor {

using namespace nn;

std::string AutoencoderConfig::id_string() const {
    return "ae-i" + std::to_string(image_channels) + "-l" + std::to_string(latent_channels) +
           "-s" + std::to_string(stage_channels[0]) + "." + std::to_string(stage_channels[1]) +
           "." + std::to_string(stage_channels[2]) + "-g" + std::to_string(norm_groups);
}

Autoencoder::Autoencoder(const AutoencoderConfig& cfg, Rng& rng) : cfg_(cfg) {
    const auto [c0, c1, c2] = cfg.stage_channels;
    const int g = cfg.norm_groups;
    e_in_ = Conv2d(cfg.image_channels, c0, 3, 1, 1, rng);
    e_s0_ = Conv2d(c0, c0, 3, 1, 1, rng);
    e_gn0_ = GroupNorm(c0, g);
    e_d0_ = Conv2d(c0, c1, 3, 2, 1, rng);
    e_s1_ = Conv2d(c1, c1, 3, 1, 1, rng);
    e_gn1_ = GroupNorm(c1, g);
    e_d1_ = Conv2d(c1, c2, 3, 2, 1, rng);
    e_s2_ = Conv2d(c2, c2, 3, 1, 1, rng);
    e_gn2_ = GroupNorm(c2, g);
    e_d2_ = Conv2d(c2, c2, 3, 2, 1, rng);
    e_bott_ = Conv2d(c2, c2, 3, 1, 1, rng);
    e_gnb_ = GroupNorm(c2, g);
    e_out_ = Conv2d(c2, 2 * cfg.latent_channels, 3, 1, 1, rng);

    d_in_ = Conv2d(cfg.latent_channels, c2, 3, 1, 1, rng);
    d_gni_ = GroupNorm(c2, g);
    d_s2_ = Conv2d(c2, c1, 3, 1, 1, rng);
    d_gn2_ = GroupNorm(c1, g);
    d_s1_ = Conv2d(c1, c0, 3, 1, 1, rng);
    d_gn1_ = GroupNorm(c0, g);
    d_s0_ = Conv2d(c0, c0, 3, 1, 1, rng);
    d_gn0_ = GroupNorm(c0, g);
    d_out_ = Conv2d(c0, cfg.image_channels, 3, 1, 1, rng);
}

EncoderOut Autoencoder::encode(const Value& x) const {
    if (x->val.dim(2) % AutoencoderConfig::kDownsample != 0 ||
        x->val.dim(3) % AutoencoderConfig::kDownsample != 0)
        throw InvalidArgument("Autoencoder::encode: dims must be divisible by 8 (pad first)");

    EncoderOut out;
    Value h = e_in_(x);
    Value f0 = silu(e_gn0_(e_s0_(h)));
    h = e_d0_(f0);
    Value f1 = silu(e_gn1_(e_s1_(h)));
    h = e_d1_(f1);
    Value f2 = silu(e_gn2_(e_s2_(h)));
    h = e_d2_(f2);
    h = silu(e_gnb_(e_bott_(h)));
    Value both = e_out_(h);
    out.mean = slice_channels(both, 0, cfg_.latent_channels);
    out.logvar = slice_channels(both, cfg_.latent_channels, 2 * cfg_.latent_channels);
    out.features = {f0, f1, f2};
    return out;
}

Value Autoencoder::decode(const Value& z, const std::array<Value, 3>* skips) const {
    Value h = silu(d_gni_(d_in_(z)));
    h = upsample_nearest2(h);                       // 1/4
    if (skips) h = add(h, (*skips)[2]);
    h = silu(d_gn2_(d_s2_(h)));
    h = upsample_nearest2(h);                       // 1/2
    if (skips) h = add(h, (*skips)[1]);
    h = silu(d_gn1_(d_s1_(h)));
    h = upsample_nearest2(h);                       // full
    if (skips) h = add(h, (*skips)[0]);
    h = silu(d_gn0_(d_s0_(h)));
    return d_out_(h);
}

void Autoencoder::params(ParamList& out, const std::string& prefix) const {
    e_in_.params(out, prefix + ".e_in");
    e_s0_.params(out, prefix + ".e_s0");
    e_gn0_.params(out, prefix + ".e_gn0");
    e_d0_.params(out, prefix + ".e_d0");
    e_s1_.params(out, prefix + ".e_s1");
    e_gn1_.params(out, prefix + ".e_gn1");
    e_d1_.params(out, prefix + ".e_d1");
    e_s2_.params(out, prefix + ".e_s2");
    e_gn2_.params(out, prefix + ".e_gn2");
    e_d2_.params(out, prefix + ".e_d2");
    e_bott_.params(out, prefix + ".e_bott");
    e_gnb_.params(out, prefix + ".e_gnb");
    e_out_.params(out, prefix + ".e_out");
    d_in_.params(out, prefix + ".d_in");
    d_gni_.params(out, prefix + ".d_gni");
    d_s2_.params(out, prefix + ".d_s2");
    d_gn2_.params(out, prefix + ".d_gn2");
    d_s1_.params(out, prefix + ".d_s1");
    d_gn1_.params(out, prefix + ".d_gn1");
    d_s0_.params(out, prefix + ".d_s0");
    d_gn0_.params(out, prefix + ".d_gn0");
    d_out_.params(out, prefix + ".d_out");
}

void Autoencoder::copy_from(const Autoencoder& src) {
    ParamList mine, theirs;
    params(mine, "ae");
    src.params(theirs, "ae");
    for (size_t i = 0; i < mine.size(); ++i) mine[i].second->val = theirs[i].second->val;
}

Tensor Autoencoder::raster_to_tensor(const Raster& img) {
    Raster rgb = img.to_rgb();
    Tensor t({1, 3, rgb.height(), rgb.width()});
    const size_t plane = rgb.pixel_count();
    for (size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) t.data[c * plane + i] = rgb.data()[i * 3 + c];
    return t;
}

Raster Autoencoder::tensor_to_raster(const Tensor& t, int n) {
    const int C = t.dim(1), H = t.dim(2), W = t.dim(3);
    if (C != 3 && C != 1) throw InvalidArgument("tensor_to_raster: needs 1 or 3 channels");
    Raster img(W, H, C);
    const size_t plane = static_cast<size_t>(H) * W;
    const size_t base = static_cast<size_t>(n) * C * plane;
    for (size_t i = 0; i < plane; ++i)
        for (int c = 0; c < C; ++c)
            img.data()[i * C + c] = std::clamp(t.data[base + c * plane + i], 0.0, 1.0);
    return img;
}

Tensor Autoencoder::encode_raster(const Raster& img) const {
    return encode(constant(raster_to_tensor(img))).mean->val;
}

Raster Autoencoder::decode_to_raster(const Tensor& z) const {
    return tensor_to_raster(decode(constant(z))->val);
}

}  // namespace refcolor
