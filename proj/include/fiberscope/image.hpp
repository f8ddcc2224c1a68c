#pragma once

#include <cstdint>
#include <vector>

#include "fiberscope/geometry.hpp"

namespace fiberscope {

/// 8-bit RGB raster, rows top to bottom, channels interleaved.
class RgbImage {
public:
    RgbImage() = default;
    /// Throws InvalidArgument unless width, height >= 1.
    RgbImage(int width, int height, std::uint8_t fill = 0);

    int width() const { return width_; }
    int height() const { return height_; }
    bool empty() const { return width_ == 0 || height_ == 0; }

    std::uint8_t* pixel(int x, int y) { return data_.data() + (std::size_t(y) * width_ + x) * 3; }
    const std::uint8_t* pixel(int x, int y) const {
        return data_.data() + (std::size_t(y) * width_ + x) * 3;
    }
    std::uint8_t* row(int y) { return pixel(0, y); }
    const std::uint8_t* row(int y) const { return pixel(0, y); }
    std::vector<std::uint8_t>& data() { return data_; }
    const std::vector<std::uint8_t>& data() const { return data_; }

    /// Copy of `rect`; parts outside the image are filled with `fill`.
    RgbImage crop(const PixelRect& rect, std::uint8_t fill = 0) const;
    /// Writes `src` with its top-left at (x, y), clipped to this image.
    void paste(const RgbImage& src, int x, int y);

    friend bool operator==(const RgbImage&, const RgbImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> data_;
};

}  // namespace fiberscope
