#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "refcolor/imaging.hpp"
#include "refcolor/raster.hpp"
#include "refcolor/retrieval.hpp"

namespace refcolor {

// Geometry of the stitched conditioning image: a 3-column x 4-row grid of
// retrieved reference patches on the left (rows are the TL/TR/BL/BR query
// quadrants, columns are ranks 1..3), the target cell on the right, 0.5
// gray fill where the bands differ in height.
struct LayoutConfig {
    int cell_w = 64;
    int cell_h = 64;
    int target_w = 128;
    int target_h = 192;

    int band_w() const { return 3 * cell_w; }
    int composite_w() const { return band_w() + target_w; }
    int composite_h() const { return std::max(4 * cell_h, target_h); }
    std::string layout_id() const;
};

struct TargetRect {
    int x = 0, y = 0, w = 0, h = 0;
    bool operator==(const TargetRect&) const = default;
};

struct Composite {
    Raster image;       // 3 channels
    Raster mask;        // 1 channel, exactly 1 on target_rect and 0 elsewhere
    TargetRect target_rect;
    std::string layout_id;

    // Debug persistence: <stem>.png, <stem>_mask.png, <stem>.json.
    void save(const std::string& path_stem) const;
    static Composite load(const std::string& path_stem);
};

// Resolves a retrieved PatchSpec to its pixels (callers typically crop from
// the reference pool keyed by source_id).
using PatchPixelProvider = std::function<Raster(const PatchSpec&)>;

// Stitch the conditioning composite: reference band from the retrieval
// result (letterboxed into cells), target resampled into the right band,
// mask = 1 over the target cell only.
Composite compose(const Raster& target, const RetrievalResult& retrieved,
                  const PatchPixelProvider& ref_pixels, const LayoutConfig& cfg);

struct TrainingPair {
    Composite bw;     // target cell replaced by augmented grayscale
    Composite color;  // fully colored twin, identical geometry
};

// Both composites share reference pixels and geometry; only the target cell
// differs: color ground truth vs its screenstyle-augmented grayscale.
TrainingPair compose_training_pair(const Raster& color_gt, const RetrievalResult& retrieved_color,
                                   const PatchPixelProvider& ref_pixels, const LayoutConfig& cfg,
                                   const AugmentationParams& aug);

struct CroppedPair {
    Composite bw;
    Composite color;
};

// Uniform random crop window over all positions that keep the full target
// region inside (the defining property of the patch-wise training crop).
// Both composites and the mask are cropped identically; target_rect is
// re-expressed in crop coordinates.
CroppedPair patchwise_crop(const TrainingPair& pair, uint64_t rng_seed, int crop_w, int crop_h);

// Inverse of the target placement: crop target_rect and resample back to
// the requested output dimensions.
Raster extract_target(const Raster& composite_image, const Composite& geometry, int out_w,
                      int out_h);

}  // namespace refcolor
