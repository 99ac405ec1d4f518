#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "refcolor/errors.hpp"

namespace refcolor {

// Raster image. Values live in [0,1], row-major, channel-interleaved:
// data[(y*width + x)*channels + c]. channels is 1 (gray) or 3 (RGB).
// Operations that need room for patch geometry or SSIM windows enforce
// their own 8x8 minimum; the value type itself allows any positive size
// so resampling can produce arbitrarily small intermediates.
class Raster {
public:
    Raster() = default;

    Raster(int width, int height, int channels, double fill = 0.0)
        : width_(width), height_(height), channels_(channels),
          data_(static_cast<size_t>(width) * height * channels, fill) {
        validate_dims(width, height, channels);
    }

    static Raster from_data(int width, int height, int channels, std::vector<double> data) {
        validate_dims(width, height, channels);
        if (data.size() != static_cast<size_t>(width) * height * channels)
            throw InvalidArgument("Raster::from_data: data size does not match dimensions");
        Raster r;
        r.width_ = width;
        r.height_ = height;
        r.channels_ = channels;
        r.data_ = std::move(data);
        r.check_values();
        return r;
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    size_t pixel_count() const { return static_cast<size_t>(width_) * height_; }

    double& at(int x, int y, int c = 0) {
        return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
    }
    double at(int x, int y, int c = 0) const {
        return data_[(static_cast<size_t>(y) * width_ + x) * channels_ + c];
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Raster& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
    }

    // Copy of the sub-rectangle [x, x+w) x [y, y+h); must be in bounds.
    Raster crop(int x, int y, int w, int h) const {
        if (x < 0 || y < 0 || w < 1 || h < 1 || x + w > width_ || y + h > height_)
            throw InvalidArgument("Raster::crop: rectangle out of bounds");
        Raster out;
        out.width_ = w;
        out.height_ = h;
        out.channels_ = channels_;
        out.data_.resize(static_cast<size_t>(w) * h * channels_);
        for (int yy = 0; yy < h; ++yy) {
            const double* src = &data_[(static_cast<size_t>(y + yy) * width_ + x) * channels_];
            double* dst = &out.data_[static_cast<size_t>(yy) * w * channels_];
            std::copy(src, src + static_cast<size_t>(w) * channels_, dst);
        }
        return out;
    }

    // Paste src at (x,y); channel counts must match, src must fit.
    void paste(const Raster& src, int x, int y) {
        if (src.channels_ != channels_)
            throw InvalidArgument("Raster::paste: channel mismatch");
        if (x < 0 || y < 0 || x + src.width_ > width_ || y + src.height_ > height_)
            throw InvalidArgument("Raster::paste: source does not fit");
        for (int yy = 0; yy < src.height_; ++yy) {
            const double* s = &src.data_[static_cast<size_t>(yy) * src.width_ * channels_];
            double* d = &data_[(static_cast<size_t>(y + yy) * width_ + x) * channels_];
            std::copy(s, s + static_cast<size_t>(src.width_) * channels_, d);
        }
    }

    // 1-channel gray replicated to 3 channels; identity on 3-channel input.
    Raster to_rgb() const {
        if (channels_ == 3) return *this;
        Raster out(width_, height_, 3);
        for (size_t i = 0; i < pixel_count(); ++i)
            for (int c = 0; c < 3; ++c) out.data_[i * 3 + c] = data_[i];
        return out;
    }

    // Snap every value to the 8-bit grid used by the PNG writer.
    Raster quantize8() const {
        Raster out = *this;
        for (double& v : out.data_) v = std::round(v * 255.0) / 255.0;
        return out;
    }

    bool operator==(const Raster& o) const {
        return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_ &&
               data_ == o.data_;
    }

private:
    static void validate_dims(int width, int height, int channels) {
        if (channels != 1 && channels != 3)
            throw InvalidArgument("Raster: channels must be 1 or 3");
        if (width < 1 || height < 1)
            throw InvalidArgument("Raster: dimensions must be positive");
    }

    void check_values() const {
        for (double v : data_)
            if (!(v >= 0.0 && v <= 1.0))
                throw InvalidArgument("Raster: values must be finite and in [0,1]");
    }

    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<double> data_;
};

}  // namespace refcolor
