#pragma once

#include <limits>
#include <string>
#include <vector>

#include "refcolor/encoder.hpp"
#include "refcolor/raster.hpp"

namespace refcolor {

// 10*log10(peak^2 / MSE); +inf when the images are identical.
// peak 1.0 covers the internal range; 255 gives published-style 8-bit numbers.
double psnr(const Raster& a, const Raster& b, double peak = 1.0);

struct SsimOptions {
    int window = 8;          // uniform window size
    bool gaussian = false;   // 11x11 Gaussian (sigma 1.5) standard variant
    double c1 = 0.01 * 0.01;
    double c2 = 0.03 * 0.03;
};

// Mean local SSIM over valid window positions; multichannel inputs are
// averaged per channel. Symmetric in its arguments.
double ssim(const Raster& a, const Raster& b, const SsimOptions& opts = {});

// Cosine similarity of whole-image embeddings.
double clip_is(const Raster& pred, const Raster& gt, const ImageEncoder& encoder);

// Frechet distance between the Gaussians fitted to two feature sets:
// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}). Small negative
// eigenvalues from the symmetric square root are clipped at zero; the
// clipped mass is reported for diagnostics.
struct FidResult {
    double value = 0.0;
    double clipped_eigen_mass = 0.0;
};
FidResult fid(const std::vector<std::vector<double>>& set_a,
              const std::vector<std::vector<double>>& set_b);

struct ImageRecord {
    std::string name;
    double psnr_db = 0.0;   // +inf sentinel possible
    double ssim = 0.0;
    double clip_is = 0.0;
};

struct MetricsReport {
    std::vector<ImageRecord> per_image;
    double mean_psnr = 0.0;  // +inf sentinel propagates
    double mean_ssim = 0.0;
    double mean_clip_is = 0.0;
    double fid = 0.0;
    double fid_clipped_mass = 0.0;
    int count = 0;
    std::string encoder_id;
    std::string extractor_id;

    std::string to_text() const;
    std::string to_json() const;
};

struct EvaluateConfig {
    std::shared_ptr<const ImageEncoder> encoder;    // CLIP-IS embeddings
    std::shared_ptr<const ImageEncoder> extractor;  // FID features
    SsimOptions ssim_opts;
    int workers = 1;
};

// Pairs files by name across the two directories (missing pairs are an
// error listing every offender), computes per-image metrics and set FID.
MetricsReport evaluate(const std::string& pred_dir, const std::string& gt_dir,
                       const EvaluateConfig& cfg);

}  // namespace refcolor
