#include "refcolor/superres.hpp"

#include <cmath>

#include <json.hpp>

#include "refcolor/errors.hpp"
#include "refcolor/imaging.hpp"
#include "refcolor/log.hpp"
#include "refcolor/nn/checkpoint.hpp"
#include "refcolor/png_io.hpp"

namespace refcolor {

using namespace nn;

std::string SrBundleConfig::to_json() const {
    nlohmann::json j;
    j["ae"] = ae.id_string();
    j["scale_factor"] = scale_factor;
    j["l1_target"] = l1_target;
    j["init_seed"] = init_seed;
    return j.dump();
}

SrBundleConfig SrBundleConfig::from_json(const std::string& json) {
    nlohmann::json j = nlohmann::json::parse(json);
    SrBundleConfig cfg;
    cfg.scale_factor = j.at("scale_factor").get<int>();
    cfg.l1_target = j.at("l1_target").get<std::string>();
    cfg.init_seed = j.at("init_seed").get<uint64_t>();
    if (j.at("ae").get<std::string>() != cfg.ae.id_string())
        throw IoError("SrBundleConfig: stored architecture differs from this build's layout");
    return cfg;
}

SrBundle::SrBundle(const SrBundleConfig& cfg) : cfg_(cfg) {
    if (cfg.scale_factor < 1) throw InvalidArgument("SrBundle: scale factor must be >= 1");
    if (cfg.l1_target != "color" && cfg.l1_target != "bw")
        throw InvalidArgument("SrBundle: l1_target must be 'color' or 'bw'");
    Rng rng(mix_seed(cfg.init_seed));
    ae_ = Autoencoder(cfg.ae, rng);
    const auto& sc = cfg.ae.stage_channels;
    for (int s = 0; s < 3; ++s) {
        fusion_[s].mix = Conv2d(2 * sc[s], sc[s], 3, 1, 1, rng);
        fusion_[s].out = Conv2d(sc[s], sc[s], 3, 1, 1, rng, 0.0);  // zero-init
    }
}

void SrBundle::init_from_autoencoder(const Autoencoder& src) { ae_.copy_from(src); }

std::array<Value, 3> SrBundle::fuse(const std::array<Value, 3>& bw_feats,
                                    const std::array<Value, 3>& color_feats) const {
    std::array<Value, 3> out;
    for (int s = 0; s < 3; ++s) {
        if (!bw_feats[s]->val.same_shape(color_feats[s]->val))
            throw InvalidArgument("SrBundle::fuse: per-scale feature streams must match");
        Value h = silu(fusion_[s].mix(concat_channels({bw_feats[s], color_feats[s]})));
        out[s] = fusion_[s].out(h);
    }
    return out;
}

ParamList SrBundle::params() const {
    ParamList out;
    ae_.params(out, "sr.ae");
    for (int s = 0; s < 3; ++s) {
        fusion_[s].mix.params(out, "sr.fuse" + std::to_string(s) + ".mix");
        fusion_[s].out.params(out, "sr.fuse" + std::to_string(s) + ".out");
    }
    return out;
}

void SrBundle::save(const std::string& path) const {
    save_checkpoint(path, cfg_.to_json(), params(),
                    {{"steps_trained", static_cast<double>(steps_trained)}});
}

SrBundle SrBundle::load(const std::string& path, const std::string& expected_config_json) {
    Checkpoint ckpt = load_checkpoint(path, expected_config_json);
    SrBundle bundle(SrBundleConfig::from_json(ckpt.config_id));
    restore_params(ckpt, bundle.params());
    bundle.steps_trained = static_cast<int>(ckpt.scalars.at("steps_trained"));
    return bundle;
}

namespace {

Value sr_forward(const SrBundle& bundle, const Raster& bw_high, const Raster& color_low) {
    const int k = bundle.cfg().scale_factor;
    if (bw_high.width() != k * color_low.width() || bw_high.height() != k * color_low.height())
        throw InvalidArgument("super_resolve: bw dims must be scale_factor x color dims");
    if (bw_high.width() % 8 != 0 || bw_high.height() % 8 != 0)
        throw InvalidArgument("super_resolve: dims must be divisible by 8");

    const Raster upsampled = resample(color_low.to_rgb(), bw_high.width(), bw_high.height());

    Value x_bw = constant(Autoencoder::raster_to_tensor(bw_high.to_rgb()));
    Value x_col = constant(Autoencoder::raster_to_tensor(upsampled));

    EncoderOut e_bw = bundle.ae().encode(x_bw);
    EncoderOut e_col = bundle.ae().encode(x_col);
    std::array<Value, 3> skips = bundle.fuse(e_bw.features, e_col.features);
    return bundle.ae().decode(e_bw.mean, &skips);
}

}  // namespace

Raster super_resolve(const Raster& bw_high, const Raster& color_low, const SrBundle& bundle) {
    return Autoencoder::tensor_to_raster(sr_forward(bundle, bw_high, color_low)->val);
}

double sr_training_step(SrBundle& bundle, Adam& opt, const std::vector<Raster>& bw_high,
                        const std::vector<Raster>& color_low,
                        const std::vector<Raster>& color_high_gt) {
    if (bw_high.empty() || bw_high.size() != color_low.size() ||
        bw_high.size() != color_high_gt.size())
        throw InvalidArgument("sr_training_step: batch size mismatch");

    Value total;
    for (size_t i = 0; i < bw_high.size(); ++i) {
        Value pred = sr_forward(bundle, bw_high[i], color_low[i]);
        const Raster& target_img =
            bundle.cfg().l1_target == "bw" ? bw_high[i].to_rgb() : color_high_gt[i];
        Value loss = l1_loss(pred, constant(Autoencoder::raster_to_tensor(target_img)));
        total = total ? add(total, loss) : loss;
    }
    total = scale(total, 1.0 / static_cast<double>(bw_high.size()));

    const double loss_v = total->val.data[0];
    if (!std::isfinite(loss_v)) throw NumericError("sr_training_step: non-finite loss");
    opt.zero_grad();
    backward(total);
    opt.step();
    return loss_v;
}

Raster degrade_for_sr(const Raster& color_high, int k, uint64_t sim_decode_noise,
                      const Autoencoder* ae) {
    if (k < 1) throw InvalidArgument("degrade_for_sr: factor must be >= 1");
    if (color_high.width() % k != 0 || color_high.height() % k != 0)
        throw InvalidArgument("degrade_for_sr: dims not divisible by the factor");

    Raster low = k == 1 ? color_high
                        : resample(color_high, color_high.width() / k, color_high.height() / k);
    if (!ae) return low;

    if (low.width() % 8 != 0 || low.height() % 8 != 0)
        throw InvalidArgument("degrade_for_sr: downsampled dims must be divisible by 8");

    // Stochastic VAE latent: mean + sigma * eps with a seeded draw, then a
    // decode, mimicking the distortion the colorization stage produces.
    EncoderOut enc = ae->encode(constant(Autoencoder::raster_to_tensor(low.to_rgb())));
    Rng rng(mix_seed(sim_decode_noise));
    Tensor z = enc.mean->val;
    for (size_t i = 0; i < z.data.size(); ++i)
        z.data[i] += std::exp(0.5 * enc.logvar->val.data[i]) * rng.normal();
    return Autoencoder::tensor_to_raster(ae->decode(constant(std::move(z)))->val);
}

std::vector<double> train_gsrp(SrBundle& bundle, const ChapterManifest& manifest,
                               const Autoencoder* degrade_ae, const SrTrainConfig& cfg) {
    const int k = bundle.cfg().scale_factor;
    if (cfg.crop % (8 * k) != 0)
        throw InvalidArgument("train_gsrp: crop must be divisible by 8*scale_factor");

    std::vector<Raster> pages;
    for (const auto& rel : manifest.refs) pages.push_back(read_png(manifest.resolve(rel)));
    for (const auto& t : manifest.tests) pages.push_back(read_png(manifest.resolve(t.gt)));

    Rng rng(mix_seed(cfg.seed, 0x5e5e));
    std::vector<Value> vals;
    for (auto& [n, v] : bundle.params()) vals.push_back(v);
    Adam opt(std::move(vals), cfg.lr);

    std::vector<double> losses;
    for (int s = 0; s < cfg.steps; ++s) {
        std::vector<Raster> bw, low, gt;
        for (int b = 0; b < cfg.batch; ++b) {
            const auto& src =
                pages[static_cast<size_t>(rng.randint(0, static_cast<int64_t>(pages.size()) - 1))];
            const int x = static_cast<int>(rng.randint(0, src.width() - cfg.crop));
            const int y = static_cast<int>(rng.randint(0, src.height() - cfg.crop));
            Raster hi = src.crop(x, y, cfg.crop, cfg.crop);
            gt.push_back(hi);
            bw.push_back(to_grayscale(hi));
            low.push_back(degrade_for_sr(hi, k, rng.next_u64(), degrade_ae));
        }
        losses.push_back(sr_training_step(bundle, opt, bw, low, gt));
        if ((s + 1) % 50 == 0)
            RC_LOG_INFO("gsrp step %d/%d loss %.4f", s + 1, cfg.steps, losses.back());
    }
    bundle.steps_trained += cfg.steps;
    return losses;
}

}  // namespace refcolor
