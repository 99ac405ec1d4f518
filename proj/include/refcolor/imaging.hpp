#pragma once

#include <cstdint>

#include "refcolor/raster.hpp"

namespace refcolor {

// Interpolation weight for screenstyle augmentation; lambda in [0,1].
struct AugmentationParams {
    double lambda = 0.0;
    uint64_t seed = 0;
};

// ITU-R 601 luma: 0.299 R + 0.587 G + 0.114 B. Rejects 1-channel input.
Raster to_grayscale(const Raster& img);

// Procedural screen-tone stand-in: ordered-dither thresholding against a
// tiled Bayer matrix. The dot period (2 or 4) is a seeded per-image choice.
// Output is binary apart from a narrow anti-aliased band around thresholds.
Raster screenstyle_proxy(const Raster& gray, uint64_t seed);

// (1 - lambda) * gray + lambda * screen, pixel-wise. Shapes must match.
Raster augment_screenstyle(const Raster& gray, const Raster& screen,
                           const AugmentationParams& params);

// Bilinear resample to new_w x new_h. Identity when dimensions are unchanged;
// constant images are preserved exactly at any target size.
Raster resample(const Raster& img, int new_w, int new_h);

}  // namespace refcolor
