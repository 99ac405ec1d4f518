#include "refcolor/unet.hpp"

#include <cmath>

#include "refcolor/errors.hpp"

namespace refcolor {

using namespace nn;

std::string DenoiserConfig::id_string() const {
    return "unet-l" + std::to_string(latent_channels) + "-b" + std::to_string(base_channels) +
           "-m" + std::to_string(channel_mult[0]) + std::to_string(channel_mult[1]) +
           std::to_string(channel_mult[2]) + "-c" + std::to_string(cond_channels) + "-g" +
           std::to_string(norm_groups) + "-e" + std::to_string(temb_dim);
}

namespace detail {

ResBlock::ResBlock(int cin, int cout, int temb_dim, int groups, Rng& rng)
    : gn1(cin, groups),
      gn2(cout, groups),
      conv1(cin, cout, 3, 1, 1, rng),
      conv2(cout, cout, 3, 1, 1, rng),
      temb_proj(temb_dim, cout, rng) {
    if (cin != cout) skip.emplace(cin, cout, 1, 1, 0, rng);
}

Value ResBlock::forward(const Value& x, const Value& temb) const {
    Value h = conv1(silu(gn1(x)));
    h = add_sample_channel_bias(h, temb_proj(silu(temb)));
    h = conv2(silu(gn2(h)));
    return add(h, skip ? (*skip)(x) : x);
}

void ResBlock::params(ParamList& out, const std::string& prefix) const {
    gn1.params(out, prefix + ".gn1");
    gn2.params(out, prefix + ".gn2");
    conv1.params(out, prefix + ".conv1");
    conv2.params(out, prefix + ".conv2");
    temb_proj.params(out, prefix + ".temb");
    if (skip) skip->params(out, prefix + ".skip");
}

void ResBlock::copy_from(const ResBlock& src) {
    gn1.copy_from(src.gn1);
    gn2.copy_from(src.gn2);
    conv1.copy_from(src.conv1);
    conv2.copy_from(src.conv2);
    temb_proj.copy_from(src.temb_proj);
    if (skip && src.skip) skip->copy_from(*src.skip);
}

AttentionBlock::AttentionBlock(int channels, int groups, Rng& rng)
    : norm(channels, groups),
      q(channels, channels, 1, 1, 0, rng),
      k(channels, channels, 1, 1, 0, rng),
      v(channels, channels, 1, 1, 0, rng),
      proj(channels, channels, 1, 1, 0, rng) {}

Value AttentionBlock::forward(const Value& x, bool apply_lora) const {
    const int C = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    Value h = norm(x);

    auto project = [&](const Conv2d& conv, const std::shared_ptr<LoRAAdapter>& lora) {
        Value out = conv(h);
        if (apply_lora && lora) out = add(out, lora->delta(h));
        return out;
    };
    Value tq = nchw_to_ntc(project(q, lora_q));
    Value tk = nchw_to_ntc(project(k, lora_k));
    Value tv = nchw_to_ntc(project(v, lora_v));

    Value scores = scale(bmm(tq, transpose_last2(tk)), 1.0 / std::sqrt(static_cast<double>(C)));
    Value att = softmax_last(scores);
    Value ctx = ntc_to_nchw(bmm(att, tv), H, W);

    Value out = proj(ctx);
    if (apply_lora && lora_proj) out = add(out, lora_proj->delta(ctx));
    return add(x, out);
}

void AttentionBlock::params(ParamList& out, const std::string& prefix) const {
    norm.params(out, prefix + ".norm");
    q.params(out, prefix + ".q");
    k.params(out, prefix + ".k");
    v.params(out, prefix + ".v");
    proj.params(out, prefix + ".proj");
}

void AttentionBlock::attach_lora(int rank, double alpha, Rng& rng) {
    const int C = q.w->val.dim(0);
    lora_q = std::make_shared<LoRAAdapter>(C, C, rank, alpha, rng);
    lora_k = std::make_shared<LoRAAdapter>(C, C, rank, alpha, rng);
    lora_v = std::make_shared<LoRAAdapter>(C, C, rank, alpha, rng);
    lora_proj = std::make_shared<LoRAAdapter>(C, C, rank, alpha, rng);
}

void AttentionBlock::lora_params(ParamList& out, const std::string& prefix) const {
    if (!lora_q) return;
    lora_q->params(out, prefix + ".q");
    lora_k->params(out, prefix + ".k");
    lora_v->params(out, prefix + ".v");
    lora_proj->params(out, prefix + ".proj");
}

}  // namespace detail

UNet::UNet(const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int c0 = cfg.base_channels * cfg.channel_mult[0];
    const int c1 = cfg.base_channels * cfg.channel_mult[1];
    const int c2 = cfg.base_channels * cfg.channel_mult[2];
    const int g = cfg.norm_groups;

    temb_fc1_ = Linear(cfg.temb_dim / 2, cfg.temb_dim, rng);
    temb_fc2_ = Linear(cfg.temb_dim, cfg.temb_dim, rng);
    conv_in_ = Conv2d(cfg.latent_channels, c0, 3, 1, 1, rng);
    rb0_ = detail::ResBlock(c0, c0, cfg.temb_dim, g, rng);
    down1_ = Conv2d(c0, c1, 3, 2, 1, rng);
    rb1_ = detail::ResBlock(c1, c1, cfg.temb_dim, g, rng);
    down2_ = Conv2d(c1, c2, 3, 2, 1, rng);
    rb2_ = detail::ResBlock(c2, c2, cfg.temb_dim, g, rng);
    attn_ = detail::AttentionBlock(c2, g, rng);
    mid_ = detail::ResBlock(c2, c2, cfg.temb_dim, g, rng);
    up1_ = Conv2d(c2, c1, 3, 1, 1, rng);
    dec1_ = detail::ResBlock(c1 + c1, c1, cfg.temb_dim, g, rng);
    up2_ = Conv2d(c1, c0, 3, 1, 1, rng);
    dec2_ = detail::ResBlock(c0 + c0, c0, cfg.temb_dim, g, rng);
    out_norm_ = GroupNorm(c0, g);
    conv_out_ = Conv2d(c0, cfg.latent_channels, 3, 1, 1, rng);
}

Value UNet::time_embedding(const std::vector<int>& t_steps) const {
    const int half = cfg_.temb_dim / 4;  // sin+cos pairs fill temb_dim/2
    const int base_dim = cfg_.temb_dim / 2;
    Tensor emb({static_cast<int>(t_steps.size()), base_dim});
    for (size_t n = 0; n < t_steps.size(); ++n) {
        for (int i = 0; i < half; ++i) {
            const double freq =
                std::exp(-std::log(10000.0) * static_cast<double>(i) / (half - 1));
            emb.data[n * base_dim + 2 * i] = std::sin(t_steps[n] * freq);
            emb.data[n * base_dim + 2 * i + 1] = std::cos(t_steps[n] * freq);
        }
    }
    return temb_fc2_(silu(temb_fc1_(constant(std::move(emb)))));
}

Value UNet::forward(const Value& z, const std::vector<int>& t_steps,
                    const std::vector<Value>* injections, bool apply_lora) const {
    if (static_cast<int>(t_steps.size()) != z->val.dim(0))
        throw InvalidArgument("UNet::forward: one timestep per sample required");
    return forward_with_temb(z, time_embedding(t_steps), injections, apply_lora);
}

Value UNet::forward_with_temb(const Value& z, const Value& temb,
                              const std::vector<Value>* injections, bool apply_lora) const {
    if (z->val.ndim() != 4 || z->val.dim(1) != cfg_.latent_channels)
        throw InvalidArgument("UNet::forward: bad latent shape");
    if (z->val.dim(2) % 4 != 0 || z->val.dim(3) % 4 != 0)
        throw InvalidArgument("UNet::forward: latent dims must be divisible by 4");
    if (injections && injections->size() != kInjectionPoints)
        throw InvalidArgument("UNet::forward: expected 5 injection features");

    auto inject = [&](Value h, int point) {
        return injections ? add(h, (*injections)[point]) : h;
    };

    Value h0 = inject(conv_in_(z), 0);
    Value s0 = inject(rb0_.forward(h0, temb), 1);
    Value h1 = down1_(s0);
    Value s1 = inject(rb1_.forward(h1, temb), 2);
    Value h2 = down2_(s1);
    Value h3 = rb2_.forward(h2, temb);
    h3 = inject(attn_.forward(h3, apply_lora), 3);
    Value hm = inject(mid_.forward(h3, temb), 4);

    Value u1 = up1_(upsample_nearest2(hm));
    Value d1 = dec1_.forward(concat_channels({u1, s1}), temb);
    Value u2 = up2_(upsample_nearest2(d1));
    Value d2 = dec2_.forward(concat_channels({u2, s0}), temb);
    return conv_out_(silu(out_norm_(d2)));
}

void UNet::params(ParamList& out, const std::string& prefix) const {
    temb_fc1_.params(out, prefix + ".temb1");
    temb_fc2_.params(out, prefix + ".temb2");
    conv_in_.params(out, prefix + ".conv_in");
    rb0_.params(out, prefix + ".rb0");
    down1_.params(out, prefix + ".down1");
    rb1_.params(out, prefix + ".rb1");
    down2_.params(out, prefix + ".down2");
    rb2_.params(out, prefix + ".rb2");
    attn_.params(out, prefix + ".attn");
    mid_.params(out, prefix + ".mid");
    up1_.params(out, prefix + ".up1");
    dec1_.params(out, prefix + ".dec1");
    up2_.params(out, prefix + ".up2");
    dec2_.params(out, prefix + ".dec2");
    out_norm_.params(out, prefix + ".out_norm");
    conv_out_.params(out, prefix + ".conv_out");
}

void UNet::attach_lora(int rank, double alpha, Rng& rng) { attn_.attach_lora(rank, alpha, rng); }

void UNet::lora_params(ParamList& out, const std::string& prefix) const {
    attn_.lora_params(out, prefix + ".attn");
}

std::array<int, UNet::kInjectionPoints> UNet::injection_channels() const {
    const int c0 = cfg_.base_channels * cfg_.channel_mult[0];
    const int c1 = cfg_.base_channels * cfg_.channel_mult[1];
    const int c2 = cfg_.base_channels * cfg_.channel_mult[2];
    return {c0, c0, c1, c2, c2};
}

Guider Guider::build(const UNet& unet, Rng& rng) {
    const DenoiserConfig& cfg = unet.cfg_;
    const int c0 = cfg.base_channels * cfg.channel_mult[0];
    const int c1 = cfg.base_channels * cfg.channel_mult[1];
    const int c2 = cfg.base_channels * cfg.channel_mult[2];
    const int g = cfg.norm_groups;

    Guider gd;
    gd.adapter_ = Conv2d(cfg.cond_channels, c0, 3, 1, 1, rng, 0.0);
    // Replicate the UNet's input conv into the Z_t slice (channels 5..8);
    // the VAE(C_bw) and mask channels start at zero contribution.
    {
        const int k = 3;
        const int zt_offset = cfg.cond_channels - cfg.latent_channels;
        for (int co = 0; co < c0; ++co)
            for (int ci = 0; ci < cfg.latent_channels; ++ci)
                for (int i = 0; i < k * k; ++i)
                    gd.adapter_.w->val
                        .data[((static_cast<size_t>(co) * cfg.cond_channels + zt_offset + ci) * k *
                               k) +
                              i] =
                        unet.conv_in_.w->val
                            .data[((static_cast<size_t>(co) * cfg.latent_channels + ci) * k * k) +
                                  i];
        gd.adapter_.b->val = unet.conv_in_.b->val;
    }

    gd.rb0_ = detail::ResBlock(c0, c0, cfg.temb_dim, g, rng);
    gd.rb0_.copy_from(unet.rb0_);
    gd.down1_ = Conv2d(c0, c1, 3, 2, 1, rng);
    gd.down1_.copy_from(unet.down1_);
    gd.rb1_ = detail::ResBlock(c1, c1, cfg.temb_dim, g, rng);
    gd.rb1_.copy_from(unet.rb1_);
    gd.down2_ = Conv2d(c1, c2, 3, 2, 1, rng);
    gd.down2_.copy_from(unet.down2_);
    gd.rb2_ = detail::ResBlock(c2, c2, cfg.temb_dim, g, rng);
    gd.rb2_.copy_from(unet.rb2_);
    gd.mid_ = detail::ResBlock(c2, c2, cfg.temb_dim, g, rng);
    gd.mid_.copy_from(unet.mid_);

    const std::array<int, UNet::kInjectionPoints> cs = unet.injection_channels();
    for (int i = 0; i < UNet::kInjectionPoints; ++i)
        gd.proj_[i] = Conv2d(cs[i], cs[i], 1, 1, 0, rng, 0.0);
    return gd;
}

std::vector<Value> Guider::forward(const Value& cond9, const Value& temb) const {
    Value f0 = adapter_(cond9);
    Value f1 = rb0_.forward(f0, temb);
    Value f2 = rb1_.forward(down1_(f1), temb);
    Value f3 = rb2_.forward(down2_(f2), temb);
    Value f4 = mid_.forward(f3, temb);
    return {proj_[0](f0), proj_[1](f1), proj_[2](f2), proj_[3](f3), proj_[4](f4)};
}

void Guider::params(ParamList& out, const std::string& prefix) const {
    adapter_.params(out, prefix + ".adapter");
    rb0_.params(out, prefix + ".rb0");
    down1_.params(out, prefix + ".down1");
    rb1_.params(out, prefix + ".rb1");
    down2_.params(out, prefix + ".down2");
    rb2_.params(out, prefix + ".rb2");
    mid_.params(out, prefix + ".mid");
    for (int i = 0; i < UNet::kInjectionPoints; ++i)
        proj_[i].params(out, prefix + ".proj" + std::to_string(i));
}

std::vector<std::pair<const Conv2d*, const Conv2d*>> Guider::mirrored_convs(
    const UNet& unet) const {
    return {
        {&rb0_.conv1, &unet.rb0_.conv1},   {&rb0_.conv2, &unet.rb0_.conv2},
        {&down1_, &unet.down1_},           {&rb1_.conv1, &unet.rb1_.conv1},
        {&rb1_.conv2, &unet.rb1_.conv2},   {&down2_, &unet.down2_},
        {&rb2_.conv1, &unet.rb2_.conv1},   {&rb2_.conv2, &unet.rb2_.conv2},
        {&mid_.conv1, &unet.mid_.conv1},   {&mid_.conv2, &unet.mid_.conv2},
    };
}

}  // namespace refcolor
