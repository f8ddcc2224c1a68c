#pragma once

// Exhaustive reference implementations of greedy duplicate suppression.

#include <random>
#include <vector>

#include "fiberscope/detection.hpp"
#include "fiberscope/inference.hpp"

namespace oracle {

using namespace fiberscope;

inline Detection random_blob(std::mt19937_64& rng, int canvas, ObjectClass cls, double conf) {
    std::uniform_int_distribution<int> pos(0, canvas - 12), size(3, 12), bit(0, 5);
    const int x = pos(rng), y = pos(rng), w = size(rng), h = size(rng);
    PlacedMask m{x, y, BinaryMask(w, h)};
    for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx)
            if (bit(rng) > 0) m.local.set(xx, yy);
    m.local.set(0, 0);
    return Detection::from_mask(cls, conf, m);
}

inline double canvas_iou(const Detection& a, const Detection& b, int size) {
    std::int64_t inter = 0, uni = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const bool pa = a.mask.at(x, y), pb = b.mask.at(x, y);
            inter += pa && pb;
            uni += pa || pb;
        }
    return uni ? double(inter) / uni : 0.0;
}

// Exhaustive greedy: repeatedly take the best remaining detection by the
// documented priority, then strike every same-class one above threshold.
inline std::vector<std::size_t> oracle_dedup(const std::vector<Detection>& d, double t, int size) {
    std::vector<char> alive(d.size(), 1);
    std::vector<std::size_t> kept;
    const auto area = [&](std::size_t i) {
        std::int64_t n = 0;
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) n += d[i].mask.at(x, y);
        return n;
    };
    for (;;) {
        std::size_t best = d.size();
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (!alive[i]) continue;
            if (best == d.size()) {
                best = i;
                continue;
            }
            const auto& a = d[i];
            const auto& b = d[best];
            const bool better =
                a.confidence != b.confidence ? a.confidence > b.confidence
                : area(i) != area(best)      ? area(i) > area(best)
                : a.box.x0 != b.box.x0       ? a.box.x0 < b.box.x0
                                             : a.box.y0 < b.box.y0;
            if (better) best = i;
        }
        if (best == d.size()) break;
        kept.push_back(best);
        alive[best] = 0;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (alive[i] && d[i].object_class == d[best].object_class && canvas_iou(d[i], d[best], size) > t)
                alive[i] = 0;
    }
    return kept;
}

inline double oracle_box_iou(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    const double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    const double inter = iw * ih;
    const double uni = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
    return uni > 0 ? inter / uni : 0.0;
}

// Survivors by definition: in priority order, a candidate survives iff no
// earlier survivor of its class overlaps it above the threshold.
inline std::vector<int> oracle_nms(const std::vector<Candidate>& c, double t) {
    std::vector<int> order(c.size());
    for (std::size_t i = 0; i < c.size(); ++i) order[i] = int(i);
    const auto before = [&](int i, int j) {
        if (c[i].confidence != c[j].confidence) return c[i].confidence > c[j].confidence;
        if (c[i].box.x0 != c[j].box.x0) return c[i].box.x0 < c[j].box.x0;
        if (c[i].box.y0 != c[j].box.y0) return c[i].box.y0 < c[j].box.y0;
        return c[i].anchor < c[j].anchor;
    };
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t j = i + 1; j < order.size(); ++j)
            if (before(order[j], order[i])) std::swap(order[i], order[j]);
    std::vector<char> alive(c.size(), 0);
    std::vector<int> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        bool ok = true;
        for (std::size_t j = 0; j < i; ++j)
            if (alive[order[j]] && c[order[j]].class_index == c[order[i]].class_index &&
                oracle_box_iou(c[order[j]].box, c[order[i]].box) > t)
                ok = false;
        alive[order[i]] = ok;
        if (ok) out.push_back(c[order[i]].anchor);
    }
    return out;
}

}  // namespace oracle
