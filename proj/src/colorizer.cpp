#include "refcolor/colorizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "refcolor/errors.hpp"
#include "refcolor/log.hpp"
#include "refcolor/nn/checkpoint.hpp"
#include "refcolor/png_io.hpp"

namespace refcolor {

using namespace nn;

std::string IcpBundleConfig::to_json() const {
    nlohmann::json j;
    j["unet"] = unet.id_string();
    j["ae"] = ae.id_string();
    j["timesteps"] = timesteps;
    j["beta_start"] = beta_start;
    j["beta_end"] = beta_end;
    j["mu"] = mu;
    j["lora_rank"] = lora_rank;
    j["lora_alpha"] = lora_alpha;
    j["init_seed"] = init_seed;
    return j.dump();
}

IcpBundleConfig IcpBundleConfig::from_json(const std::string& json) {
    nlohmann::json j = nlohmann::json::parse(json);
    IcpBundleConfig cfg;
    // Architecture strings are identity checks; the numeric fields drive
    // reconstruction. Defaults already match the id strings.
    cfg.timesteps = j.at("timesteps").get<int>();
    cfg.beta_start = j.at("beta_start").get<double>();
    cfg.beta_end = j.at("beta_end").get<double>();
    cfg.mu = j.at("mu").get<double>();
    cfg.lora_rank = j.at("lora_rank").get<int>();
    cfg.lora_alpha = j.at("lora_alpha").get<double>();
    cfg.init_seed = j.at("init_seed").get<uint64_t>();
    if (j.at("unet").get<std::string>() != cfg.unet.id_string() ||
        j.at("ae").get<std::string>() != cfg.ae.id_string())
        throw IoError("IcpBundleConfig: stored architecture differs from this build's layout");
    return cfg;
}

IcpBundle::IcpBundle(const IcpBundleConfig& cfg) : cfg_(cfg) {
    Rng rng(mix_seed(cfg.init_seed));
    unet_ = UNet(cfg.unet, rng);
    ae_ = Autoencoder(cfg.ae, rng);
    guider_ = Guider::build(unet_, rng);
    unet_.attach_lora(cfg.lora_rank, cfg.lora_alpha, rng);
    sched_ = NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end);
}

void IcpBundle::rebuild_conditioning(uint64_t seed) {
    Rng rng(mix_seed(seed, 0xc0de));
    guider_ = Guider::build(unet_, rng);
    unet_.attach_lora(cfg_.lora_rank, cfg_.lora_alpha, rng);
}

Value IcpBundle::denoise9(const Value& input9, const std::vector<int>& t_steps,
                          bool use_conditioning) const {
    if (input9->val.dim(1) != cfg_.unet.cond_channels)
        throw InvalidArgument("denoise9: expected 9 conditioning channels");
    const int zt_begin = cfg_.unet.cond_channels - cfg_.unet.latent_channels;
    Value z = slice_channels(input9, zt_begin, cfg_.unet.cond_channels);
    Value temb = unet_.time_embedding(t_steps);
    if (!use_conditioning) return unet_.forward_with_temb(z, temb, nullptr, false);
    std::vector<Value> feats = guider_.forward(input9, temb);
    return unet_.forward_with_temb(z, temb, &feats, true);
}

Tensor IcpBundle::denoise9_eval(const Tensor& input9, int t, bool use_conditioning) const {
    std::vector<int> ts(static_cast<size_t>(input9.dim(0)), t);
    return denoise9(constant(input9), ts, use_conditioning)->val;
}

ParamList IcpBundle::ae_params() const {
    ParamList out;
    ae_.params(out, "ae");
    return out;
}

ParamList IcpBundle::unet_params() const {
    ParamList out;
    unet_.params(out, "unet");
    return out;
}

ParamList IcpBundle::guider_params() const {
    ParamList out;
    guider_.params(out, "guider");
    return out;
}

ParamList IcpBundle::lora_params() const {
    ParamList out;
    unet_.lora_params(out, "lora");
    return out;
}

ParamList IcpBundle::trainable_params() const {
    ParamList out = guider_params();
    ParamList lora = lora_params();
    out.insert(out.end(), lora.begin(), lora.end());
    return out;
}

Tensor IcpBundle::encode_image(const Raster& img) const {
    Tensor z = ae_.encode_raster(img);
    const double inv = 1.0 / latent_scale;
    for (double& v : z.data) v *= inv;
    return z;
}

Raster IcpBundle::decode_latent(const Tensor& z) const {
    Tensor scaled = z;
    for (double& v : scaled.data) v *= latent_scale;
    return ae_.decode_to_raster(scaled);
}

void IcpBundle::save(const std::string& path) const {
    ParamList all = unet_params();
    for (auto& list : {ae_params(), guider_params(), lora_params()})
        all.insert(all.end(), list.begin(), list.end());
    std::map<std::string, double> scalars{
        {"latent_scale", latent_scale},
        {"ae_steps_trained", static_cast<double>(ae_steps_trained)},
        {"unet_steps_trained", static_cast<double>(unet_steps_trained)},
        {"icp_steps_trained", static_cast<double>(icp_steps_trained)},
    };
    save_checkpoint(path, cfg_.to_json(), all, scalars);
}

IcpBundle IcpBundle::load(const std::string& path, const std::string& expected_config_json) {
    Checkpoint ckpt = load_checkpoint(path, expected_config_json);
    IcpBundle bundle(IcpBundleConfig::from_json(ckpt.config_id));
    ParamList all = bundle.unet_params();
    for (auto& list : {bundle.ae_params(), bundle.guider_params(), bundle.lora_params()})
        all.insert(all.end(), list.begin(), list.end());
    restore_params(ckpt, all);
    bundle.latent_scale = ckpt.scalars.at("latent_scale");
    bundle.ae_steps_trained = static_cast<int>(ckpt.scalars.at("ae_steps_trained"));
    bundle.unet_steps_trained = static_cast<int>(ckpt.scalars.at("unet_steps_trained"));
    bundle.icp_steps_trained = static_cast<int>(ckpt.scalars.at("icp_steps_trained"));
    return bundle;
}

Raster downsample_mask(const Raster& mask, int factor) {
    if (mask.channels() != 1) throw InvalidArgument("downsample_mask: expects 1 channel");
    if (mask.width() % factor != 0 || mask.height() % factor != 0)
        throw InvalidArgument("downsample_mask: dims not divisible by the factor");
    Raster out(mask.width() / factor, mask.height() / factor, 1);
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            out.at(x, y) = mask.at(x * factor + factor / 2, y * factor + factor / 2);
    for (double v : out.data())
        if (v != 0.0 && v != 1.0) throw InvalidArgument("downsample_mask: mask is not binary");
    return out;
}

Tensor mask_to_tensor(const Raster& mask) {
    Tensor t({1, 1, mask.height(), mask.width()});
    t.data = mask.data();
    return t;
}

Raster pad_to_multiple(const Raster& img, int n, double fill) {
    const int w = (img.width() + n - 1) / n * n;
    const int h = (img.height() + n - 1) / n * n;
    if (w == img.width() && h == img.height()) return img;
    Raster out(w, h, img.channels(), fill);
    out.paste(img, 0, 0);
    return out;
}

namespace {

// Stacks per-sample (1,C,H,W) tensors into (B,C,H,W).
Tensor stack_batch(const std::vector<Tensor>& items) {
    const int B = static_cast<int>(items.size());
    Tensor out({B, items[0].dim(1), items[0].dim(2), items[0].dim(3)});
    const size_t stride = items[0].data.size();
    for (int i = 0; i < B; ++i)
        std::copy(items[i].data.begin(), items[i].data.end(), out.data.begin() + i * stride);
    return out;
}

}  // namespace

double icp_training_step(IcpBundle& bundle, Adam& opt, const std::vector<CroppedPair>& batch,
                         Rng& rng) {
    if (batch.empty()) throw InvalidArgument("icp_training_step: empty batch");
    const int B = static_cast<int>(batch.size());

    std::vector<Tensor> conds, z0s, masks;
    std::vector<int> t_steps;
    for (const CroppedPair& pair : batch) {
        conds.push_back(bundle.encode_image(pair.bw.image));
        z0s.push_back(bundle.encode_image(pair.color.image));
        masks.push_back(mask_to_tensor(downsample_mask(pair.bw.mask)));
        t_steps.push_back(sample_training_timestep(rng, bundle.shift(), bundle.schedule().T));
    }

    Tensor cond = stack_batch(conds);
    Tensor z0 = stack_batch(z0s);
    Tensor mask = stack_batch(masks);

    Tensor eps(z0.shape);
    for (double& v : eps.data) v = rng.normal();

    Tensor z_t(z0.shape);
    const size_t stride = z0.data.size() / B;
    for (int i = 0; i < B; ++i) {
        const double ab = bundle.schedule().alpha_bar(t_steps[i]);
        const double c0 = std::sqrt(ab), ce = std::sqrt(1.0 - ab);
        for (size_t j = 0; j < stride; ++j)
            z_t.data[i * stride + j] = c0 * z0.data[i * stride + j] + ce * eps.data[i * stride + j];
    }

    Value input9 = concat_channels(
        {constant(std::move(cond)), constant(std::move(mask)), constant(std::move(z_t))});
    Value eps_hat = bundle.denoise9(input9, t_steps, true);
    Value loss = mse_loss(eps_hat, constant(std::move(eps)));

    const double loss_v = loss->val.data[0];
    if (!std::isfinite(loss_v))
        throw NumericError("icp_training_step: non-finite loss (step aborted); t=" +
                           std::to_string(t_steps[0]));
    opt.zero_grad();
    backward(loss);
    opt.step();
    return loss_v;
}

double unet_pretrain_step(IcpBundle& bundle, Adam& opt, const std::vector<Tensor>& latents,
                          Rng& rng) {
    if (latents.empty()) throw InvalidArgument("unet_pretrain_step: empty batch");
    const int B = static_cast<int>(latents.size());
    Tensor z0 = stack_batch(latents);

    std::vector<int> t_steps;
    for (int i = 0; i < B; ++i)
        t_steps.push_back(static_cast<int>(rng.randint(1, bundle.schedule().T)));

    Tensor eps(z0.shape);
    for (double& v : eps.data) v = rng.normal();
    Tensor z_t(z0.shape);
    const size_t stride = z0.data.size() / B;
    for (int i = 0; i < B; ++i) {
        const double ab = bundle.schedule().alpha_bar(t_steps[i]);
        const double c0 = std::sqrt(ab), ce = std::sqrt(1.0 - ab);
        for (size_t j = 0; j < stride; ++j)
            z_t.data[i * stride + j] = c0 * z0.data[i * stride + j] + ce * eps.data[i * stride + j];
    }

    Value eps_hat =
        bundle.unet().forward(constant(std::move(z_t)), t_steps, nullptr, /*apply_lora=*/false);
    Value loss = mse_loss(eps_hat, constant(std::move(eps)));
    const double loss_v = loss->val.data[0];
    if (!std::isfinite(loss_v)) throw NumericError("unet_pretrain_step: non-finite loss");
    opt.zero_grad();
    backward(loss);
    opt.step();
    return loss_v;
}

double ae_training_step(Autoencoder& ae, Adam& opt, const Tensor& batch, Rng& rng,
                        double kl_weight) {
    Value x = constant(batch);
    EncoderOut enc = ae.encode(x);

    Tensor noise(enc.mean->val.shape);
    for (double& v : noise.data) v = rng.normal();
    Value z = add(enc.mean, mul(exp_op(scale(enc.logvar, 0.5)), constant(std::move(noise))));
    Value recon = ae.decode(z);

    Value rec_loss = l1_loss(recon, x);
    // KL(q || N(0,1)) = -0.5 * mean(1 + logvar - mean^2 - exp(logvar))
    Value kl = scale(sub(sub(add_scalar(mean_all(enc.logvar), 1.0),
                             mean_all(mul(enc.mean, enc.mean))),
                         mean_all(exp_op(enc.logvar))),
                     -0.5);
    Value loss = add(rec_loss, scale(kl, kl_weight));
    const double loss_v = loss->val.data[0];
    if (!std::isfinite(loss_v)) throw NumericError("ae_training_step: non-finite loss");
    opt.zero_grad();
    backward(loss);
    opt.step();
    return loss_v;
}

IcpDataset::IcpDataset(const ChapterManifest& manifest, const ImageEncoder& encoder,
                       const LayoutConfig& layout, int workers)
    : layout_(layout) {
    refs_.reserve(manifest.refs.size());
    ref_ids_ = manifest.refs;
    for (const auto& rel : manifest.refs) refs_.push_back(read_png(manifest.resolve(rel)));
    gts_.reserve(manifest.tests.size());
    for (const auto& t : manifest.tests) gts_.push_back(read_png(manifest.resolve(t.gt)));

    index_ = build_reference_index(refs_, ref_ids_, encoder, workers);

    retrievals_.resize(gts_.size());
    std::atomic<size_t> next{0};
    auto work = [&] {
        for (size_t i = next.fetch_add(1); i < gts_.size(); i = next.fetch_add(1))
            retrievals_[i] = retrieve(to_grayscale(gts_[i]), index_, encoder);
    };
    if (workers <= 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
        for (auto& t : pool) t.join();
    }
}

PatchPixelProvider IcpDataset::provider() const {
    return [this](const PatchSpec& p) -> Raster {
        for (size_t i = 0; i < ref_ids_.size(); ++i)
            if (ref_ids_[i] == p.source_id)
                return refs_[i].crop(p.origin_x, p.origin_y, p.width, p.height);
        throw InvalidArgument("patch provider: unknown source_id " + p.source_id);
    };
}

TrainingPair IcpDataset::training_pair(int page, const AugmentationParams& aug) const {
    return compose_training_pair(gts_[page], retrievals_[page], provider(), layout_, aug);
}

CroppedPair IcpDataset::sample_crop(Rng& rng, int crop_w, int crop_h) const {
    const int page = static_cast<int>(rng.randint(0, static_cast<int64_t>(gts_.size()) - 1));
    AugmentationParams aug{rng.uniform01(), rng.next_u64()};
    TrainingPair pair = training_pair(page, aug);
    return patchwise_crop(pair, rng.next_u64(), crop_w, crop_h);
}

Raster IcpDataset::random_color_crop(Rng& rng, int w, int h) const {
    const size_t total = refs_.size() + gts_.size();
    const size_t pick = static_cast<size_t>(rng.randint(0, static_cast<int64_t>(total) - 1));
    const Raster& src = pick < refs_.size() ? refs_[pick] : gts_[pick - refs_.size()];
    const int x = static_cast<int>(rng.randint(0, src.width() - w));
    const int y = static_cast<int>(rng.randint(0, src.height() - h));
    return src.crop(x, y, w, h);
}

namespace {

// Crop sizes must satisfy the target-containment floor, the composite
// ceiling, and keep latent dims UNet-compatible (multiples of 32 in pixels).
int pick_size(Rng& rng, const std::vector<int>& candidates, int lo, int hi) {
    std::vector<int> valid;
    for (int c : candidates)
        if (c >= lo && c <= hi) valid.push_back(c);
    if (valid.empty()) valid.push_back(hi);
    return valid[static_cast<size_t>(rng.randint(0, static_cast<int64_t>(valid.size()) - 1))];
}

}  // namespace

TrainLog train_icp(IcpBundle& bundle, IcpDataset& data, const IcpTrainConfig& cfg) {
    TrainLog log;
    Rng rng(mix_seed(cfg.seed, 0x7a11));
    const LayoutConfig& layout = data.layout();

    if (cfg.ae_steps > 0) {
        Adam opt([&] {
            ParamList p = bundle.ae_params();
            std::vector<Value> vals;
            for (auto& [n, v] : p) vals.push_back(v);
            return vals;
        }(), cfg.ae_lr);
        for (int s = 0; s < cfg.ae_steps; ++s) {
            std::vector<Tensor> crops;
            for (int b = 0; b < cfg.ae_batch; ++b)
                crops.push_back(Autoencoder::raster_to_tensor(
                    data.random_color_crop(rng, cfg.ae_crop, cfg.ae_crop)));
            const double loss = ae_training_step(bundle.ae(), opt, stack_batch(crops), rng,
                                                 cfg.kl_weight);
            log.ae_losses.push_back(loss);
            if ((s + 1) % 50 == 0)
                RC_LOG_INFO("ae pretrain step %d/%d loss %.4f", s + 1, cfg.ae_steps, loss);
        }
        bundle.ae_steps_trained += cfg.ae_steps;

        // Latent scale: unit-variance latents stabilize the diffusion stage.
        double sq_sum = 0.0;
        int64_t count = 0;
        for (int i = 0; i < 16; ++i) {
            Tensor z = bundle.ae().encode_raster(data.random_color_crop(rng, cfg.ae_crop, cfg.ae_crop));
            for (double v : z.data) sq_sum += v * v;
            count += z.numel();
        }
        bundle.latent_scale = std::max(1e-6, std::sqrt(sq_sum / static_cast<double>(count)));
        RC_LOG_INFO("latent scale set to %.4f", bundle.latent_scale);
    }

    if (cfg.unet_steps > 0) {
        Adam opt([&] {
            ParamList p = bundle.unet_params();
            std::vector<Value> vals;
            for (auto& [n, v] : p) vals.push_back(v);
            return vals;
        }(), cfg.unet_lr);
        for (int s = 0; s < cfg.unet_steps; ++s) {
            const int cw = pick_size(rng, cfg.crop_widths, layout.target_w, layout.composite_w());
            const int ch = pick_size(rng, cfg.crop_heights, layout.target_h, layout.composite_h());
            std::vector<Tensor> latents;
            for (int b = 0; b < cfg.unet_batch; ++b) {
                CroppedPair pair = data.sample_crop(rng, cw, ch);
                latents.push_back(bundle.encode_image(pair.color.image));
            }
            const double loss = unet_pretrain_step(bundle, opt, latents, rng);
            log.unet_losses.push_back(loss);
            if ((s + 1) % 50 == 0)
                RC_LOG_INFO("unet pretrain step %d/%d loss %.4f", s + 1, cfg.unet_steps, loss);
        }
        bundle.unet_steps_trained += cfg.unet_steps;
        // Conditioning must mirror the *pretrained* convolutions.
        bundle.rebuild_conditioning(cfg.seed);
    }

    if (cfg.icp_steps > 0) {
        Adam opt([&] {
            ParamList p = bundle.trainable_params();
            std::vector<Value> vals;
            for (auto& [n, v] : p) vals.push_back(v);
            return vals;
        }(), cfg.icp_lr);
        for (int s = 0; s < cfg.icp_steps; ++s) {
            const int cw = pick_size(rng, cfg.crop_widths, layout.target_w, layout.composite_w());
            const int ch = pick_size(rng, cfg.crop_heights, layout.target_h, layout.composite_h());
            std::vector<CroppedPair> batch;
            for (int b = 0; b < cfg.icp_batch; ++b) batch.push_back(data.sample_crop(rng, cw, ch));
            const double loss = icp_training_step(bundle, opt, batch, rng);
            log.icp_losses.push_back(loss);
            if ((s + 1) % 25 == 0)
                RC_LOG_INFO("icp step %d/%d loss %.4f", s + 1, cfg.icp_steps, loss);
        }
        bundle.icp_steps_trained += cfg.icp_steps;
    }
    return log;
}

LayoutConfig ColorizeConfig::preset(const std::string& name) {
    LayoutConfig layout;
    if (name == "desk" || name.empty()) {
        layout.target_w = 128;
        layout.target_h = 192;
    } else if (name == "512x800") {
        layout.target_w = 512;
        layout.target_h = 800;
        layout.cell_w = layout.cell_h = 128;
    } else if (name == "1024x1600") {
        layout.target_w = 1024;
        layout.target_h = 1600;
        layout.cell_w = layout.cell_h = 256;
    } else if (name == "1280x2000") {
        layout.target_w = 1280;
        layout.target_h = 2000;
        layout.cell_w = layout.cell_h = 320;
    } else {
        throw InvalidArgument("unknown resolution preset '" + name + "'");
    }
    return layout;
}

Raster colorize(const Raster& bw_page, const std::vector<Raster>& pool,
                const std::vector<std::string>& pool_ids, const IcpBundle& bundle,
                const ImageEncoder& encoder, const ColorizeConfig& cfg,
                const ReferenceIndex* prebuilt_index) {
    if (pool.empty() && !prebuilt_index) throw InvalidArgument("colorize: empty reference pool");
    if (bundle.icp_steps_trained == 0)
        RC_LOG_WARN("colorize: bundle has no colorization training; output will be noise-driven");

    ReferenceIndex local;
    const ReferenceIndex* index = prebuilt_index;
    if (!index) {
        local = build_reference_index(pool, pool_ids, encoder);
        index = &local;
    }

    RetrievalResult retrieved = retrieve(bw_page, *index, encoder);

    // Inference uses the complete stitched image (no crop).
    auto by_id = [&](const PatchSpec& p) -> Raster {
        for (size_t i = 0; i < pool_ids.size(); ++i)
            if (pool_ids[i] == p.source_id)
                return pool[i].crop(p.origin_x, p.origin_y, p.width, p.height);
        throw InvalidArgument("colorize: retrieval references unknown source_id " + p.source_id);
    };
    Composite comp = compose(bw_page, retrieved, by_id, cfg.layout);

    // The UNet needs latent dims divisible by 4 => pixel dims by 32.
    Raster padded_img = pad_to_multiple(comp.image, 32, 0.5);
    Raster padded_mask = pad_to_multiple(comp.mask, 32, 0.0);

    Tensor cond = bundle.encode_image(padded_img);
    Tensor mask_lat = mask_to_tensor(downsample_mask(padded_mask));

    Rng rng(mix_seed(cfg.seed, 0x5eed));
    DenoiseFn denoise = [&](const Tensor& z_t, int t) {
        Tensor input9({1, bundle.config().unet.cond_channels, z_t.dim(2), z_t.dim(3)});
        const size_t plane = static_cast<size_t>(z_t.dim(2)) * z_t.dim(3);
        std::copy(cond.data.begin(), cond.data.end(), input9.data.begin());
        std::copy(mask_lat.data.begin(), mask_lat.data.end(), input9.data.begin() + 4 * plane);
        std::copy(z_t.data.begin(), z_t.data.end(), input9.data.begin() + 5 * plane);
        return bundle.denoise9_eval(input9, t, true);
    };

    Tensor z0 = sample_loop(denoise, cond.shape, cfg.steps, bundle.schedule(), rng);
    Raster decoded = bundle.decode_latent(z0);
    Raster unpadded = decoded.crop(0, 0, comp.image.width(), comp.image.height());
    return extract_target(unpadded, comp, cfg.layout.target_w, cfg.layout.target_h);
}

}  // namespace refcolor
