#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "fiberscope/geometry.hpp"
#include "fiberscope/image.hpp"

namespace fiberscope {

/// Random-access pixel provider. Implementations must allow concurrent read().
class ImageSource {
public:
    virtual ~ImageSource() = default;
    virtual int width() const = 0;
    virtual int height() const = 0;
    /// Pixels of `rect`; parts outside the image read as 0.
    virtual RgbImage read(const PixelRect& rect) const = 0;
};

class MemoryImageSource : public ImageSource {
public:
    explicit MemoryImageSource(RgbImage image);
    int width() const override { return image_.width(); }
    int height() const override { return image_.height(); }
    RgbImage read(const PixelRect& rect) const override { return image_.crop(rect); }
    const RgbImage& image() const { return image_; }

private:
    RgbImage image_;
};

/// TIFF/BigTIFF read window by window; only the strips or tiles a request
/// touches are decoded.
class TiffImageSource : public ImageSource {
public:
    /// Throws IoError when the file cannot be opened as TIFF.
    explicit TiffImageSource(const std::filesystem::path& path);
    ~TiffImageSource() override;
    int width() const override { return width_; }
    int height() const override { return height_; }
    RgbImage read(const PixelRect& rect) const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    int width_ = 0;
    int height_ = 0;
};

bool is_tiff_path(const std::filesystem::path& path);

/// TIFF files open windowed; other formats are decoded whole. Grayscale and
/// 16-bit inputs are expanded to 8-bit RGB. Throws IoError.
std::unique_ptr<ImageSource> open_image_source(const std::filesystem::path& path);

/// Whole-image decode of an in-memory file (PNG, JPEG, TIFF, BMP...).
/// Throws IoError on undecodable bytes.
RgbImage decode_image(std::span<const std::uint8_t> bytes);
RgbImage read_image(const std::filesystem::path& path);

/// Writes 8-bit RGB TIFF, tiled when tile_size > 0 (multiple of 16).
/// BigTIFF is chosen automatically above 2 GiB of pixel data.
void write_tiff(const RgbImage& image, const std::filesystem::path& path, int tile_size = 0);

std::vector<std::uint8_t> encode_png(const RgbImage& image);
/// Single-channel PNG, foreground 255 and background 0.
std::vector<std::uint8_t> encode_png(const BinaryMask& mask);
/// Any nonzero pixel is foreground. Throws IoError.
BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes);

}  // namespace fiberscope
