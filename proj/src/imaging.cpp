#include "refcolor/imaging.hpp"

#include <algorithm>
#include <cmath>

#include "refcolor/rng.hpp"

namespace refcolor {

Raster to_grayscale(const Raster& img) {
    if (img.channels() != 3)
        throw InvalidArgument("to_grayscale: input is already single-channel");
    Raster out(img.width(), img.height(), 1);
    const auto& src = img.data();
    auto& dst = out.data();
    for (size_t i = 0; i < out.pixel_count(); ++i)
        dst[i] = 0.299 * src[i * 3] + 0.587 * src[i * 3 + 1] + 0.114 * src[i * 3 + 2];
    return out;
}

namespace {

// Classic index matrices; thresholds are (b + 0.5) / n^2.
constexpr int kBayer2[2][2] = {{0, 2}, {3, 1}};
constexpr int kBayer4[4][4] = {{0, 8, 2, 10}, {12, 4, 14, 6}, {3, 11, 1, 9}, {15, 7, 13, 5}};

}  // namespace

Raster screenstyle_proxy(const Raster& gray, uint64_t seed) {
    if (gray.channels() != 1)
        throw InvalidArgument("screenstyle_proxy: expects a 1-channel input");
    Rng rng(mix_seed(seed));
    const int period = rng.uniform01() < 0.5 ? 2 : 4;
    // Narrow linear ramp around each threshold so cell borders are not hard.
    const double band = 1.0 / 32.0;

    Raster out(gray.width(), gray.height(), 1);
    for (int y = 0; y < gray.height(); ++y) {
        for (int x = 0; x < gray.width(); ++x) {
            double thr = period == 2 ? (kBayer2[y % 2][x % 2] + 0.5) / 4.0
                                     : (kBayer4[y % 4][x % 4] + 0.5) / 16.0;
            double v = (gray.at(x, y) - thr) / band + 0.5;
            out.at(x, y) = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

Raster augment_screenstyle(const Raster& gray, const Raster& screen,
                           const AugmentationParams& params) {
    if (!gray.same_shape(screen))
        throw InvalidArgument("augment_screenstyle: shape mismatch");
    if (!(params.lambda >= 0.0 && params.lambda <= 1.0))
        throw InvalidArgument("augment_screenstyle: lambda must be in [0,1]");
    Raster out = gray;
    const double lam = params.lambda;
    const auto& s = screen.data();
    auto& d = out.data();
    for (size_t i = 0; i < d.size(); ++i) d[i] = (1.0 - lam) * d[i] + lam * s[i];
    return out;
}

namespace {

inline double lerp(double a, double b, double t) { return a + t * (b - a); }

}  // namespace

Raster resample(const Raster& img, int new_w, int new_h) {
    if (new_w < 1 || new_h < 1)
        throw InvalidArgument("resample: target dimensions must be positive");
    if (new_w == img.width() && new_h == img.height()) return img;

    Raster out(new_w, new_h, img.channels());
    const double sx = static_cast<double>(img.width()) / new_w;
    const double sy = static_cast<double>(img.height()) / new_h;
    const int xmax = img.width() - 1;
    const int ymax = img.height() - 1;

    for (int y = 0; y < new_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double ty = fy - y0;
        int y1 = std::clamp(y0 + 1, 0, ymax);
        y0 = std::clamp(y0, 0, ymax);
        for (int x = 0; x < new_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double tx = fx - x0;
            int x1 = std::clamp(x0 + 1, 0, xmax);
            x0 = std::clamp(x0, 0, xmax);
            for (int c = 0; c < img.channels(); ++c) {
                double top = lerp(img.at(x0, y0, c), img.at(x1, y0, c), tx);
                double bot = lerp(img.at(x0, y1, c), img.at(x1, y1, c), tx);
                out.at(x, y, c) = std::clamp(lerp(top, bot, ty), 0.0, 1.0);
            }
        }
    }
    return out;
}

}  // namespace refcolor
