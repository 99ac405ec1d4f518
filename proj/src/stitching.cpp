#include "refcolor/stitching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "refcolor/errors.hpp"
#include "refcolor/png_io.hpp"
#include "refcolor/rng.hpp"

namespace refcolor {

std::string LayoutConfig::layout_id() const {
    return "grid3x4-cell" + std::to_string(cell_w) + "x" + std::to_string(cell_h) + "-target" +
           std::to_string(target_w) + "x" + std::to_string(target_h);
}

namespace {

constexpr double kPadGray = 0.5;

// Aspect-preserving fit of src into cell_w x cell_h, centered on 0.5 gray.
Raster letterbox(const Raster& src, int cell_w, int cell_h) {
    double scale = std::min(static_cast<double>(cell_w) / src.width(),
                            static_cast<double>(cell_h) / src.height());
    int w = std::max(1, static_cast<int>(std::lround(src.width() * scale)));
    int h = std::max(1, static_cast<int>(std::lround(src.height() * scale)));
    w = std::min(w, cell_w);
    h = std::min(h, cell_h);
    Raster cell(cell_w, cell_h, 3, kPadGray);
    cell.paste(resample(src.to_rgb(), w, h), (cell_w - w) / 2, (cell_h - h) / 2);
    return cell;
}

const std::array<PatchRole, 4> kQuadrantRows = {PatchRole::TL, PatchRole::TR, PatchRole::BL,
                                                PatchRole::BR};

Composite compose_with_target_cell(const Raster& target_cell, const RetrievalResult& retrieved,
                                   const PatchPixelProvider& ref_pixels, const LayoutConfig& cfg) {
    if (cfg.cell_w < 8 || cfg.cell_h < 8)
        throw InvalidArgument("compose: cells smaller than 8x8");

    Composite comp;
    comp.layout_id = cfg.layout_id();
    comp.image = Raster(cfg.composite_w(), cfg.composite_h(), 3, kPadGray);
    comp.mask = Raster(cfg.composite_w(), cfg.composite_h(), 1, 0.0);
    comp.target_rect = {cfg.band_w(), 0, cfg.target_w, cfg.target_h};

    for (int row = 0; row < 4; ++row) {
        auto it = retrieved.per_quadrant.find(kQuadrantRows[row]);
        if (it == retrieved.per_quadrant.end() || it->second.size() != 3)
            throw InvalidArgument("compose: retrieval result must hold 3 entries per quadrant");
        for (int col = 0; col < 3; ++col) {
            Raster pixels = ref_pixels(it->second[col].patch);
            comp.image.paste(letterbox(pixels, cfg.cell_w, cfg.cell_h), col * cfg.cell_w,
                             row * cfg.cell_h);
        }
    }

    comp.image.paste(resample(target_cell.to_rgb(), cfg.target_w, cfg.target_h), cfg.band_w(), 0);
    for (int y = 0; y < cfg.target_h; ++y)
        for (int x = 0; x < cfg.target_w; ++x) comp.mask.at(cfg.band_w() + x, y) = 1.0;
    return comp;
}

}  // namespace

Composite compose(const Raster& target, const RetrievalResult& retrieved,
                  const PatchPixelProvider& ref_pixels, const LayoutConfig& cfg) {
    return compose_with_target_cell(target, retrieved, ref_pixels, cfg);
}

TrainingPair compose_training_pair(const Raster& color_gt, const RetrievalResult& retrieved_color,
                                   const PatchPixelProvider& ref_pixels, const LayoutConfig& cfg,
                                   const AugmentationParams& aug) {
    if (color_gt.channels() != 3)
        throw InvalidArgument("compose_training_pair: color ground truth must be RGB");

    TrainingPair pair;
    pair.color = compose_with_target_cell(color_gt, retrieved_color, ref_pixels, cfg);

    // Augment the target cell after placement so both composites share the
    // exact same resampled geometry.
    Raster placed = pair.color.image.crop(pair.color.target_rect.x, pair.color.target_rect.y,
                                          pair.color.target_rect.w, pair.color.target_rect.h);
    Raster gray = to_grayscale(placed);
    Raster screen = screenstyle_proxy(gray, aug.seed);
    Raster augmented = augment_screenstyle(gray, screen, aug);

    pair.bw = pair.color;
    pair.bw.image.paste(augmented.to_rgb(), pair.bw.target_rect.x, pair.bw.target_rect.y);
    return pair;
}

CroppedPair patchwise_crop(const TrainingPair& pair, uint64_t rng_seed, int crop_w, int crop_h) {
    const Composite& base = pair.bw;
    const TargetRect& t = base.target_rect;
    const int W = base.image.width();
    const int H = base.image.height();
    if (crop_w < t.w || crop_h < t.h)
        throw InvalidArgument("patchwise_crop: crop smaller than the target region");
    if (crop_w > W || crop_h > H)
        throw InvalidArgument("patchwise_crop: crop larger than the composite");
    if (!pair.color.image.same_shape(base.image) || pair.color.target_rect != t)
        throw InvalidArgument("patchwise_crop: pair geometry mismatch");

    // Valid origins keep the whole target inside the window.
    const int x_lo = std::max(0, t.x + t.w - crop_w);
    const int x_hi = std::min(t.x, W - crop_w);
    const int y_lo = std::max(0, t.y + t.h - crop_h);
    const int y_hi = std::min(t.y, H - crop_h);

    Rng rng(mix_seed(rng_seed));
    const int x = static_cast<int>(rng.randint(x_lo, x_hi));
    const int y = static_cast<int>(rng.randint(y_lo, y_hi));

    auto crop_one = [&](const Composite& src) {
        Composite out;
        out.layout_id = src.layout_id;
        out.image = src.image.crop(x, y, crop_w, crop_h);
        out.mask = src.mask.crop(x, y, crop_w, crop_h);
        out.target_rect = {t.x - x, t.y - y, t.w, t.h};
        return out;
    };
    return {crop_one(pair.bw), crop_one(pair.color)};
}

Raster extract_target(const Raster& composite_image, const Composite& geometry, int out_w,
                      int out_h) {
    const TargetRect& t = geometry.target_rect;
    if (!composite_image.same_shape(geometry.image))
        throw InvalidArgument("extract_target: image does not match composite geometry");
    return resample(composite_image.crop(t.x, t.y, t.w, t.h), out_w, out_h);
}

void Composite::save(const std::string& path_stem) const {
    write_png(image, path_stem + ".png");
    write_png(mask, path_stem + "_mask.png");
    nlohmann::json meta{
        {"layout_id", layout_id},
        {"target_rect", {target_rect.x, target_rect.y, target_rect.w, target_rect.h}},
    };
    std::ofstream f(path_stem + ".json");
    if (!f) throw IoError("Composite::save: cannot open " + path_stem + ".json");
    f << meta.dump(2) << "\n";
}

Composite Composite::load(const std::string& path_stem) {
    Composite comp;
    comp.image = read_png(path_stem + ".png");
    comp.mask = read_png(path_stem + "_mask.png");
    std::ifstream f(path_stem + ".json");
    if (!f) throw IoError("Composite::load: cannot open " + path_stem + ".json");
    nlohmann::json meta = nlohmann::json::parse(f);
    comp.layout_id = meta.at("layout_id").get<std::string>();
    auto r = meta.at("target_rect");
    comp.target_rect = {r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(),
                        r.at(3).get<int>()};
    return comp;
}

}  // namespace refcolor
