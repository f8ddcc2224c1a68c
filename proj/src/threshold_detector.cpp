#include "fiberscope/threshold_detector.hpp"

#include <algorithm>

namespace fiberscope {

std::vector<Detection> ThresholdDetector::detect(const RgbImage& image) const {
    const int w = image.width(), h = image.height();
    std::vector<std::uint8_t> fg(std::size_t(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::uint8_t* p = image.pixel(x, y);
            fg[std::size_t(y) * w + x] = (p[0] + p[1] + p[2]) < 3 * options_.max_intensity;
        }

    std::vector<Detection> out;
    std::vector<int> stack, pixels;
    for (int start = 0; start < w * h; ++start) {
        if (!fg[start]) continue;
        fg[start] = 0;
        stack.assign(1, start);
        pixels.clear();
        PixelRect b{w, h, 0, 0};
        while (!stack.empty()) {
            const int i = stack.back();
            stack.pop_back();
            pixels.push_back(i);
            const int x = i % w, y = i / w;
            b = {std::min(b.x0, x), std::min(b.y0, y), std::max(b.x1, x + 1), std::max(b.y1, y + 1)};
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const int j = ny * w + nx;
                    if (fg[j]) {
                        fg[j] = 0;
                        stack.push_back(j);
                    }
                }
        }
        if (int(pixels.size()) < options_.min_area) continue;
        PlacedMask mask{b.x0, b.y0, BinaryMask(b.width(), b.height())};
        double r = 0, g = 0, bl = 0;
        for (int i : pixels) {
            const int x = i % w, y = i / w;
            mask.local.set(x - b.x0, y - b.y0);
            const std::uint8_t* p = image.pixel(x, y);
            r += p[0];
            g += p[1];
            bl += p[2];
        }
        const double n = double(pixels.size());
        const double mean = (r + g + bl) / (3 * n);
        const ObjectClass cls =
            (bl - r) / n > options_.vessel_blue_margin ? ObjectClass::Vessel : ObjectClass::Fiber;
        out.push_back(Detection::from_mask(cls, 1.0 - mean / 255.0, std::move(mask)));
    }
    std::sort(out.begin(), out.end(), confidence_order);
    return out;
}

}  // namespace fiberscope
