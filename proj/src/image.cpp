#include "fiberscope/image.hpp"

#include <algorithm>
#include <cstring>

#include "fiberscope/error.hpp"

namespace fiberscope {

RgbImage::RgbImage(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw InvalidArgument("RgbImage: width and height must be >= 1");
    data_.assign(std::size_t(width) * height * 3, fill);
}

RgbImage RgbImage::crop(const PixelRect& rect, std::uint8_t fill) const {
    RgbImage out(std::max(rect.width(), 1), std::max(rect.height(), 1), fill);
    const PixelRect in = rect.intersect({0, 0, width_, height_});
    for (int y = in.y0; y < in.y1; ++y)
        std::memcpy(out.pixel(in.x0 - rect.x0, y - rect.y0), pixel(in.x0, y),
                    std::size_t(in.width()) * 3);
    return out;
}

void RgbImage::paste(const RgbImage& src, int x, int y) {
    const PixelRect dst = PixelRect{x, y, x + src.width(), y + src.height()}.intersect(
        {0, 0, width_, height_});
    for (int yy = dst.y0; yy < dst.y1; ++yy)
        std::memcpy(pixel(dst.x0, yy), src.pixel(dst.x0 - x, yy - y), std::size_t(dst.width()) * 3);
}

}  // namespace fiberscope
