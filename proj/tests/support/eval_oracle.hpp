#pragma once

// Exhaustive reference for greedy matching, 101-point AP and the
// F1-confidence sweep. Works on full-canvas masks and direct loops.

#include <algorithm>
#include <array>
#include <optional>
#include <random>
#include <vector>

#include "fiberscope/evaluation.hpp"
#include "oracles.hpp"

namespace oracle {

struct Entry {
    double confidence;
    int image;
    int prediction;
    bool tp;
};

struct Matched {
    std::array<std::vector<Entry>, 2> entries;
    std::array<int, 2> truths{};
};

inline double pair_iou(const fiberscope::Detection& p, const fiberscope::GroundTruth& g,
                       fiberscope::MatchMode mode, int w, int h) {
    if (mode == fiberscope::MatchMode::Box) {
        const auto a = p.box, b = g.box();
        const double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
        const double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
        const double inter = ix * iy;
        const double uni = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter;
        return uni > 0 ? inter / uni : 0.0;
    }
    return iou(p.mask.to_canvas(w, h), g.mask.to_canvas(w, h));
}

inline Matched match(const std::vector<fiberscope::EvalImage>& images, double t,
                     fiberscope::MatchMode mode, int w, int h) {
    Matched out;
    for (int im = 0; im < int(images.size()); ++im) {
        const auto& I = images[im];
        for (int c = 0; c < 2; ++c) {
            std::vector<int> preds, truths;
            for (int i = 0; i < int(I.predictions.size()); ++i)
                if (int(I.predictions[i].object_class) == c) preds.push_back(i);
            for (int j = 0; j < int(I.truths.size()); ++j)
                if (int(I.truths[j].object_class) == c) truths.push_back(j);
            out.truths[c] += int(truths.size());
            // Selection sort by confidence desc, index asc.
            for (std::size_t a = 0; a < preds.size(); ++a)
                for (std::size_t b = a + 1; b < preds.size(); ++b) {
                    const auto& pa = I.predictions[preds[a]];
                    const auto& pb = I.predictions[preds[b]];
                    if (pb.confidence > pa.confidence ||
                        (pb.confidence == pa.confidence && preds[b] < preds[a]))
                        std::swap(preds[a], preds[b]);
                }
            std::vector<bool> used(truths.size(), false);
            for (int p : preds) {
                int best = -1;
                double bv = -1;
                for (std::size_t j = 0; j < truths.size(); ++j) {
                    if (used[j]) continue;
                    const double v = pair_iou(I.predictions[p], I.truths[truths[j]], mode, w, h);
                    if (v >= t && v > bv) {
                        bv = v;
                        best = int(j);
                    }
                }
                if (best >= 0) used[best] = true;
                out.entries[c].push_back({I.predictions[p].confidence, im, p, best >= 0});
            }
        }
    }
    for (auto& v : out.entries)
        std::stable_sort(v.begin(), v.end(), [](const Entry& a, const Entry& b) {
            if (a.confidence != b.confidence) return a.confidence > b.confidence;
            if (a.image != b.image) return a.image < b.image;
            return a.prediction < b.prediction;
        });
    return out;
}

/// Interpolated precision at recall r = max precision over all ranks whose
/// recall reaches r.
inline std::optional<double> ap101(const std::vector<Entry>& e, int truths) {
    if (truths == 0) return std::nullopt;
    double sum = 0;
    for (int k = 0; k <= 100; ++k) {
        const double r = k / 100.0;
        double best = 0;
        int tp = 0;
        for (std::size_t i = 0; i < e.size(); ++i) {
            tp += e[i].tp;
            const double rec = double(tp) / truths;
            const double prec = double(tp) / double(i + 1);
            if (rec >= r) best = std::max(best, prec);
        }
        sum += best;
    }
    return sum / 101.0;
}

inline double f1_at(const Matched& m, double cutoff, int cls /* -1 = all */) {
    int tp = 0, fp = 0, gt = 0;
    for (int c = 0; c < 2; ++c) {
        if (cls >= 0 && c != cls) continue;
        gt += m.truths[c];
        for (const auto& e : m.entries[c])
            if (e.confidence >= cutoff) (e.tp ? tp : fp)++;
    }
    const double p = tp + fp ? double(tp) / (tp + fp) : 0.0;
    const double r = gt ? double(tp) / gt : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

/// Random scene on a w x h canvas; confidences drawn from a coarse grid so
/// ties occur.
inline std::vector<fiberscope::EvalImage> random_scene(std::mt19937_64& rng, int images,
                                                       int max_pred, int max_truth, int w,
                                                       int h, bool boxes_only) {
    using namespace fiberscope;
    std::vector<EvalImage> out(images);
    std::uniform_int_distribution<int> cls(0, 1), conf(1, 10);
    const auto shape = [&](int cx, int cy) {
        std::uniform_int_distribution<int> ext(2, 9);
        if (boxes_only) {
            const int x0 = std::clamp(cx - ext(rng), 0, w - 2);
            const int y0 = std::clamp(cy - ext(rng), 0, h - 2);
            const int x1 = std::clamp(cx + ext(rng), x0 + 1, w);
            const int y1 = std::clamp(cy + ext(rng), y0 + 1, h);
            BinaryMask m(w, h);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) m.set(x, y);
            return PlacedMask::from_canvas(m);
        }
        for (;;) {
            const BinaryMask m = rasterize(random_star(rng, 7, cx + 0.5, cy + 0.5, 2, 9), w, h);
            if (m.count() > 0) return PlacedMask::from_canvas(m);
        }
    };
    for (auto& I : out) {
        std::uniform_int_distribution<int> np(0, max_pred), nt(0, max_truth);
        std::uniform_int_distribution<int> px(4, w - 5), py(4, h - 5), jitter(-3, 3);
        const int nt_ = nt(rng), np_ = np(rng);
        std::vector<std::pair<int, int>> centers;
        for (int j = 0; j < nt_; ++j) {
            const int cx = px(rng), cy = py(rng);
            centers.push_back({cx, cy});
            I.truths.push_back({ObjectClass(cls(rng)), shape(cx, cy)});
        }
        for (int i = 0; i < np_; ++i) {
            int cx = px(rng), cy = py(rng);
            if (!centers.empty() && i % 3 != 2) {
                auto c = centers[std::uniform_int_distribution<std::size_t>(0, centers.size() - 1)(rng)];
                cx = std::clamp(c.first + jitter(rng), 2, w - 3);
                cy = std::clamp(c.second + jitter(rng), 2, h - 3);
            }
            I.predictions.push_back(
                Detection::from_mask(ObjectClass(cls(rng)), conf(rng) / 10.0, shape(cx, cy)));
        }
    }
    return out;
}

}  // namespace oracle
