#include "fiberscope/evaluation.hpp"

#include <algorithm>
#include <numeric>

namespace fiberscope {

BoundingBox GroundTruth::box() const {
    const PixelRect r = mask.foreground_bounds();
    return {double(r.x0), double(r.y0), double(r.x1), double(r.y1)};
}

std::string to_string(MatchMode mode) { return mode == MatchMode::Box ? "box" : "mask"; }

double iou_threshold_at(int k) { return (50 + 5 * k) / 100.0; }

namespace {

bool entry_order(const ScoredPrediction& a, const ScoredPrediction& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.image != b.image) return a.image < b.image;
    return a.prediction < b.prediction;
}

// IoU tables of one image, split by class.
struct ClassTable {
    std::vector<int> preds;   // prediction indices, confidence order
    std::vector<int> truths;  // truth indices, ascending
    std::vector<double> iou;  // preds.size() x truths.size()
};

std::array<ClassTable, kNumClasses> build_tables(const std::vector<Detection>& predictions,
                                                 const std::vector<GroundTruth>& truth,
                                                 MatchMode mode) {
    std::array<ClassTable, kNumClasses> tables;
    for (int i = 0; i < static_cast<int>(predictions.size()); ++i)
        tables[class_index(predictions[i].object_class)].preds.push_back(i);
    for (int j = 0; j < static_cast<int>(truth.size()); ++j)
        tables[class_index(truth[j].object_class)].truths.push_back(j);
    for (auto& t : tables) {
        std::stable_sort(t.preds.begin(), t.preds.end(), [&](int a, int b) {
            return predictions[a].confidence > predictions[b].confidence;
        });
        t.iou.assign(t.preds.size() * t.truths.size(), 0.0);
        for (std::size_t i = 0; i < t.preds.size(); ++i) {
            const Detection& p = predictions[t.preds[i]];
            for (std::size_t j = 0; j < t.truths.size(); ++j) {
                const GroundTruth& g = truth[t.truths[j]];
                t.iou[i * t.truths.size() + j] =
                    mode == MatchMode::Box ? box_iou(p.box, g.box()) : mask_iou(p.mask, g.mask);
            }
        }
    }
    return tables;
}

MatchResult greedy(const std::array<ClassTable, kNumClasses>& tables,
                   const std::vector<Detection>& predictions, double threshold, int image) {
    MatchResult out;
    out.iou_threshold = threshold;
    for (int c = 0; c < kNumClasses; ++c) {
        const ClassTable& t = tables[c];
        out.truth_count[c] = static_cast<int>(t.truths.size());
        std::vector<bool> taken(t.truths.size(), false);
        for (std::size_t i = 0; i < t.preds.size(); ++i) {
            int best = -1;
            double best_iou = threshold;
            for (std::size_t j = 0; j < t.truths.size(); ++j) {
                if (taken[j]) continue;
                const double v = t.iou[i * t.truths.size() + j];
                if (v >= best_iou && (best < 0 || v > best_iou)) {
                    best = static_cast<int>(j);
                    best_iou = v;
                }
            }
            ScoredPrediction e;
            e.confidence = predictions[t.preds[i]].confidence;
            e.prediction = t.preds[i];
            e.image = image;
            if (best >= 0) {
                taken[best] = true;
                e.true_positive = true;
                e.truth = t.truths[best];
            }
            out.predictions[c].push_back(e);
        }
        std::stable_sort(out.predictions[c].begin(), out.predictions[c].end(), entry_order);
    }
    return out;
}

}  // namespace

void MatchResult::merge(const MatchResult& other) {
    for (int c = 0; c < kNumClasses; ++c) {
        predictions[c].insert(predictions[c].end(), other.predictions[c].begin(),
                              other.predictions[c].end());
        std::stable_sort(predictions[c].begin(), predictions[c].end(), entry_order);
        truth_count[c] += other.truth_count[c];
    }
}

int MatchResult::true_positives(ObjectClass c) const {
    const auto& v = predictions[class_index(c)];
    return static_cast<int>(std::count_if(v.begin(), v.end(), [](const auto& e) { return e.true_positive; }));
}

MatchResult match(const std::vector<Detection>& predictions, const std::vector<GroundTruth>& truth,
                  double iou_threshold, MatchMode mode) {
    return greedy(build_tables(predictions, truth, mode), predictions, iou_threshold, 0);
}

MatchResult match_images(const std::vector<EvalImage>& images, double iou_threshold,
                         MatchMode mode) {
    MatchResult out;
    out.iou_threshold = iou_threshold;
    for (int i = 0; i < static_cast<int>(images.size()); ++i) {
        const auto& img = images[i];
        out.merge(greedy(build_tables(img.predictions, img.truths, mode), img.predictions,
                         iou_threshold, i));
    }
    return out;
}

std::array<double, 101> precision_envelope(const MatchResult& match, ObjectClass c) {
    std::array<double, 101> q{};
    const int n_gt = match.truth_count[class_index(c)];
    if (n_gt == 0) return q;
    const auto& entries = match.predictions[class_index(c)];
    const std::size_t n = entries.size();
    std::vector<double> recall(n), precision(n);
    int tp = 0, fp = 0;
    for (std::size_t i = 0; i < n; ++i) {
        entries[i].true_positive ? ++tp : ++fp;
        recall[i] = double(tp) / n_gt;
        precision[i] = double(tp) / (tp + fp);
    }
    for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    for (int t = 0; t <= 100; ++t) {
        const double r = t / 100.0;
        const auto it = std::lower_bound(recall.begin(), recall.end(), r);
        q[t] = it == recall.end() ? 0.0 : precision[std::size_t(it - recall.begin())];
    }
    return q;
}

std::optional<double> average_precision(const MatchResult& match, ObjectClass c) {
    if (match.truth_count[class_index(c)] == 0) return std::nullopt;
    const auto q = precision_envelope(match, c);
    return std::accumulate(q.begin(), q.end(), 0.0) / 101.0;
}

MapResult map_range(const std::vector<EvalImage>& images, MatchMode mode) {
    std::vector<std::array<ClassTable, kNumClasses>> tables;
    tables.reserve(images.size());
    for (const auto& img : images) tables.push_back(build_tables(img.predictions, img.truths, mode));

    MapResult out;
    for (int k = 0; k < kNumIouThresholds; ++k) {
        MatchResult m;
        for (int i = 0; i < static_cast<int>(images.size()); ++i)
            m.merge(greedy(tables[i], images[i].predictions, iou_threshold_at(k), i));
        for (ObjectClass c : kAllClasses) out.table[class_index(c)][k] = average_precision(m, c);
    }

    double sum50 = 0, sum_all = 0;
    int classes = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        if (!out.table[c][0]) continue;
        double s = 0;
        for (int k = 0; k < kNumIouThresholds; ++k) s += *out.table[c][k];
        out.ap50[c] = out.table[c][0];
        out.ap50_95[c] = s / kNumIouThresholds;
        sum50 += *out.ap50[c];
        sum_all += *out.ap50_95[c];
        ++classes;
    }
    if (classes > 0) {
        out.map50 = sum50 / classes;
        out.map50_95 = sum_all / classes;
    }
    return out;
}

OperatingPoint operating_point(const MatchResult& match, double cutoff,
                               std::optional<ObjectClass> c) {
    int tp = 0, fp = 0, n_gt = 0;
    for (ObjectClass k : kAllClasses) {
        if (c && *c != k) continue;
        n_gt += match.truth_count[class_index(k)];
        for (const auto& e : match.predictions[class_index(k)]) {
            if (e.confidence < cutoff) continue;
            e.true_positive ? ++tp : ++fp;
        }
    }
    OperatingPoint p;
    p.cutoff = cutoff;
    p.precision = tp + fp > 0 ? double(tp) / (tp + fp) : 0.0;
    p.recall = n_gt > 0 ? double(tp) / n_gt : 0.0;
    p.f1 = p.precision + p.recall > 0 ? 2 * p.precision * p.recall / (p.precision + p.recall) : 0.0;
    return p;
}

F1Curve f1_confidence_curve(const MatchResult& match) {
    F1Curve curve;
    curve.cutoffs = {0.0, 1.0};
    for (const auto& cls : match.predictions)
        for (const auto& e : cls) curve.cutoffs.push_back(e.confidence);
    std::sort(curve.cutoffs.begin(), curve.cutoffs.end());
    curve.cutoffs.erase(std::unique(curve.cutoffs.begin(), curve.cutoffs.end()), curve.cutoffs.end());

    // Counts at each cutoff via one pass over confidence-sorted entries.
    struct Counts {
        int tp = 0, fp = 0, gt = 0;
    };
    const auto sweep = [&](std::optional<ObjectClass> only) {
        std::vector<ScoredPrediction> all;
        int gt = 0;
        for (ObjectClass k : kAllClasses) {
            if (only && *only != k) continue;
            gt += match.truth_count[class_index(k)];
            all.insert(all.end(), match.predictions[class_index(k)].begin(),
                       match.predictions[class_index(k)].end());
        }
        std::sort(all.begin(), all.end(),
                  [](const auto& a, const auto& b) { return a.confidence > b.confidence; });
        std::vector<OperatingPoint> pts(curve.cutoffs.size());
        Counts n;
        n.gt = gt;
        std::size_t next = 0;
        for (std::size_t i = curve.cutoffs.size(); i-- > 0;) {
            const double cut = curve.cutoffs[i];
            while (next < all.size() && all[next].confidence >= cut) {
                all[next].true_positive ? ++n.tp : ++n.fp;
                ++next;
            }
            OperatingPoint& p = pts[i];
            p.cutoff = cut;
            p.precision = n.tp + n.fp > 0 ? double(n.tp) / (n.tp + n.fp) : 0.0;
            p.recall = n.gt > 0 ? double(n.tp) / n.gt : 0.0;
            p.f1 = p.precision + p.recall > 0
                       ? 2 * p.precision * p.recall / (p.precision + p.recall)
                       : 0.0;
        }
        return pts;
    };

    curve.aggregate = sweep(std::nullopt);
    for (ObjectClass k : kAllClasses) curve.per_class[class_index(k)] = sweep(k);
    curve.best = curve.aggregate.front();
    for (const auto& p : curve.aggregate)
        if (p.f1 > curve.best.f1) curve.best = p;
    return curve;
}

F1Curve f1_confidence_curve(const std::vector<EvalImage>& images, MatchMode mode,
                            double iou_threshold) {
    return f1_confidence_curve(match_images(images, iou_threshold, mode));
}

EvaluationReport evaluate(const std::vector<EvalImage>& images, MatchMode mode) {
    EvaluationReport r;
    r.mode = mode;
    const MatchResult m50 = match_images(images, 0.5, mode);
    r.f1_curve = f1_confidence_curve(m50);
    r.operating_cutoff = r.f1_curve.best.cutoff;
    r.precision = r.f1_curve.best.precision;
    r.recall = r.f1_curve.best.recall;
    r.f1 = r.f1_curve.best.f1;
    r.map = map_range(images, mode);
    r.map50 = r.map.map50;
    r.map50_95 = r.map.map50_95;
    for (ObjectClass c : kAllClasses) {
        const int k = class_index(c);
        const OperatingPoint p = operating_point(m50, r.operating_cutoff, c);
        auto& cm = r.per_class[k];
        cm.precision = p.precision;
        cm.recall = p.recall;
        cm.f1 = p.f1;
        cm.ap50 = r.map.ap50[k];
        cm.ap50_95 = r.map.ap50_95[k];
        cm.truth_count = m50.truth_count[k];
        r.pr_curves[k] = precision_envelope(m50, c);
        if (cm.truth_count == 0)
            r.notices.push_back(std::string("class '") + std::string(class_name(c)) +
                                "' has no ground truth; AP skipped");
    }
    return r;
}

}  // namespace fiberscope
