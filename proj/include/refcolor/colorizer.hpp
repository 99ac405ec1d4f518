#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "refcolor/autoencoder.hpp"
#include "refcolor/bench.hpp"
#include "refcolor/diffusion.hpp"
#include "refcolor/stitching.hpp"
#include "refcolor/unet.hpp"

namespace refcolor {

// Architecture + schedule identity of a colorization bundle. Serialized
// into checkpoints; loading refuses a mismatched config.
struct IcpBundleConfig {
    DenoiserConfig unet;
    AutoencoderConfig ae;
    int timesteps = 1000;
    double beta_start = 8.5e-4;
    double beta_end = 1.2e-2;
    double mu = 1.5;
    int lora_rank = 64;
    double lora_alpha = 64.0;  // scale = alpha / rank = 1
    uint64_t init_seed = 17;

    std::string to_json() const;
    static IcpBundleConfig from_json(const std::string& json);
};

// The in-context colorization bundle: frozen-capable base UNet + VAE,
// conditioning guider branch, LoRA adapters on the base attention.
class IcpBundle {
public:
    explicit IcpBundle(const IcpBundleConfig& cfg);

    const IcpBundleConfig& config() const { return cfg_; }

    UNet& unet() { return unet_; }
    const UNet& unet() const { return unet_; }
    Guider& guider() { return guider_; }
    const Guider& guider() const { return guider_; }
    Autoencoder& ae() { return ae_; }
    const Autoencoder& ae() const { return ae_; }
    const NoiseSchedule& schedule() const { return sched_; }
    ShiftParams shift() const { return {cfg_.mu}; }

    double latent_scale = 1.0;
    int ae_steps_trained = 0;
    int unet_steps_trained = 0;
    int icp_steps_trained = 0;

    // Re-mirror the guider from the (possibly pretrained) UNet and re-init
    // the LoRA adapters; projections and LoRA B return to zero.
    void rebuild_conditioning(uint64_t seed);

    // Conditioned noise prediction. input9 channel order:
    // (VAE(C_bw)[4], M_latent[1], Z_t[4]); one timestep per sample.
    // use_conditioning=false runs the bare base UNet on the Z_t slice.
    nn::Value denoise9(const nn::Value& input9, const std::vector<int>& t_steps,
                       bool use_conditioning) const;
    nn::Tensor denoise9_eval(const nn::Tensor& input9, int t, bool use_conditioning) const;

    nn::ParamList ae_params() const;
    nn::ParamList unet_params() const;      // base weights, excluding LoRA
    nn::ParamList guider_params() const;    // mirrored convs + projections
    nn::ParamList lora_params() const;
    nn::ParamList trainable_params() const; // guider + LoRA

    // Latent-space helpers (eval mode, deterministic; applies latent_scale).
    nn::Tensor encode_image(const Raster& img) const;
    Raster decode_latent(const nn::Tensor& z) const;

    void save(const std::string& path) const;
    static IcpBundle load(const std::string& path, const std::string& expected_config_json = "");

private:
    IcpBundleConfig cfg_;
    UNet unet_;
    Guider guider_;
    Autoencoder ae_;
    NoiseSchedule sched_;
};

// Nearest-neighbor mask reduction to latent resolution; values stay {0,1}.
Raster downsample_mask(const Raster& mask, int factor = 8);

// mask (1ch, {0,1}) -> (1,1,H,W) tensor for conditioning.
nn::Tensor mask_to_tensor(const Raster& mask);

// Pad an image (0.5 gray) and mask (zeros) so both dims are multiples of n.
Raster pad_to_multiple(const Raster& img, int n, double fill);

// One optimizer update on a batch of cropped training pairs (Eq-style MSE
// between injected and predicted noise, timestep drawn via the shifted
// sampler). Updates guider + LoRA only; throws NumericError on a
// non-finite loss.
double icp_training_step(IcpBundle& bundle, nn::Adam& opt, const std::vector<CroppedPair>& batch,
                         Rng& rng);

// Unconditional pretraining update for the base UNet (uniform timesteps).
double unet_pretrain_step(IcpBundle& bundle, nn::Adam& opt,
                          const std::vector<nn::Tensor>& latents, Rng& rng);

// VAE pretraining update: L1 reconstruction + small KL.
double ae_training_step(Autoencoder& ae, nn::Adam& opt, const nn::Tensor& batch, Rng& rng,
                        double kl_weight);

// Loads a chapter, builds the reference index, caches per-page retrievals,
// and samples training crops.
class IcpDataset {
public:
    IcpDataset(const ChapterManifest& manifest, const ImageEncoder& encoder,
               const LayoutConfig& layout, int workers = 1);

    size_t page_count() const { return gts_.size(); }
    const ReferenceIndex& index() const { return index_; }
    const LayoutConfig& layout() const { return layout_; }

    TrainingPair training_pair(int page, const AugmentationParams& aug) const;
    CroppedPair sample_crop(Rng& rng, int crop_w, int crop_h) const;
    // Random color crop from any chapter image (refs + ground truth).
    Raster random_color_crop(Rng& rng, int w, int h) const;

    PatchPixelProvider provider() const;

private:
    LayoutConfig layout_;
    std::vector<Raster> refs_;
    std::vector<Raster> gts_;
    std::vector<RetrievalResult> retrievals_;
    ReferenceIndex index_;
    std::vector<std::string> ref_ids_;
};

struct IcpTrainConfig {
    int ae_steps = 350;
    int ae_batch = 4;
    int ae_crop = 64;
    double ae_lr = 2e-3;
    double kl_weight = 1e-3;

    int unet_steps = 250;
    int unet_batch = 2;
    double unet_lr = 1.5e-3;

    int icp_steps = 200;
    int icp_batch = 2;
    double icp_lr = 1.5e-3;

    // Candidate crop sizes (multiples of 32 so latents stay UNet-friendly);
    // clamped to the composite and target bounds at use.
    std::vector<int> crop_widths = {160, 224, 288, 320};
    std::vector<int> crop_heights = {192, 224, 256};

    uint64_t seed = 1;
    int workers = 1;
};

struct TrainLog {
    std::vector<double> ae_losses;
    std::vector<double> unet_losses;
    std::vector<double> icp_losses;
};

// Full training recipe: VAE pretrain -> latent scale -> base-UNet pretrain
// -> re-mirror guider/LoRA -> ICP steps (guider + LoRA only).
// Phases with zero steps are skipped (e.g. when resuming).
TrainLog train_icp(IcpBundle& bundle, IcpDataset& data, const IcpTrainConfig& cfg);

struct ColorizeConfig {
    int steps = 20;
    uint64_t seed = 0;
    LayoutConfig layout;          // layout.target_* is the output resolution
    std::string encoder = "toy";

    // Inference-resolution presets mirroring the ablation settings; the
    // layout target takes the named size.
    static LayoutConfig preset(const std::string& name);
};

// End-to-end page colorization: retrieve -> compose -> encode -> guided
// DDIM -> decode -> extract. Deterministic given cfg.seed.
Raster colorize(const Raster& bw_page, const std::vector<Raster>& pool,
                const std::vector<std::string>& pool_ids, const IcpBundle& bundle,
                const ImageEncoder& encoder, const ColorizeConfig& cfg,
                const ReferenceIndex* prebuilt_index = nullptr);

}  // namespace refcolor
