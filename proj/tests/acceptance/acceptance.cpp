// Acceptance gate: one PASS/FAIL line per criterion. Exit status is nonzero
// when a criterion fails other than a known reference-value error.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "eval_oracle.hpp"
#include "fiberscope/export.hpp"
#include "fiberscope/pipeline.hpp"
#include "fiberscope/service.hpp"
#include "fiberscope/statistics.hpp"
#include "fiberscope/threshold_detector.hpp"
#include "merge_oracle.hpp"
#include "synthetic_scene.hpp"

using namespace fiberscope;
using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;
    // Set when the stated reference value itself is wrong.
    bool known_reference_error = false;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            if (pass) detail << "failed: ";
            else detail << "; ";
            detail << what;
            pass = false;
        }
    }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int precision = 6) {
    std::ostringstream o;
    o.precision(precision);
    o << v;
    return o.str();
}

// ---------------------------------------------------------------------------

void metric_oracles(Outcome& o) {
    const auto t0 = Clock::now();
    constexpr int kW = 48, kH = 48;
    std::mt19937_64 rng(20240611);
    int scenarios = 0;
    std::size_t mismatches = 0;
    for (int s = 0; s < 60; ++s) {
        const auto images = oracle::random_scene(rng, 1 + s % 3, 12, 8, kW, kH, false);
        ++scenarios;
        for (MatchMode mode : {MatchMode::Mask, MatchMode::Box}) {
            for (int k = 0; k < kNumIouThresholds; ++k) {
                const double t = iou_threshold_at(k);
                const MatchResult got = match_images(images, t, mode);
                const oracle::Matched want = oracle::match(images, t, mode, kW, kH);
                for (ObjectClass c : kAllClasses) {
                    const int ci = class_index(c);
                    mismatches += got.truth_count[ci] != want.truths[ci];
                    if (got.predictions[ci].size() != want.entries[ci].size()) {
                        ++mismatches;
                        continue;
                    }
                    for (std::size_t i = 0; i < want.entries[ci].size(); ++i)
                        mismatches += got.predictions[ci][i].true_positive != want.entries[ci][i].tp ||
                                      got.predictions[ci][i].prediction != want.entries[ci][i].prediction ||
                                      got.predictions[ci][i].image != want.entries[ci][i].image;
                    const auto ap = average_precision(got, c);
                    const auto ref = oracle::ap101(want.entries[ci], want.truths[ci]);
                    mismatches += ap.has_value() != ref.has_value() || (ap && std::abs(*ap - *ref) > 1e-9);
                }
            }
            // mAP is the mean over classes with truth of the per-threshold APs.
            const MapResult map = map_range(images, mode);
            double m50 = 0, m5095 = 0;
            int classes = 0;
            for (ObjectClass c : kAllClasses) {
                const oracle::Matched first = oracle::match(images, 0.5, mode, kW, kH);
                if (first.truths[class_index(c)] == 0) continue;
                ++classes;
                m50 += *oracle::ap101(first.entries[class_index(c)], first.truths[class_index(c)]);
                for (int k = 0; k < kNumIouThresholds; ++k) {
                    const auto mk = oracle::match(images, iou_threshold_at(k), mode, kW, kH);
                    m5095 += *oracle::ap101(mk.entries[class_index(c)], mk.truths[class_index(c)]) / kNumIouThresholds;
                }
            }
            if (classes) {
                mismatches += std::abs(map.map50 - m50 / classes) > 1e-9;
                mismatches += std::abs(map.map50_95 - m5095 / classes) > 1e-9;
            }
            const F1Curve curve = f1_confidence_curve(images, mode, 0.5);
            const oracle::Matched m = oracle::match(images, 0.5, mode, kW, kH);
            for (std::size_t i = 0; i < curve.cutoffs.size(); ++i)
                mismatches += curve.aggregate[i].f1 != oracle::f1_at(m, curve.cutoffs[i], -1);
        }
    }
    MatchResult hand;
    hand.truth_count[0] = 2;
    hand.predictions[0] = {{0.9, true, 0, 0, 0}, {0.8, false, 1, -1, 0}, {0.7, true, 2, 1, 0}};
    const double ap = *average_precision(hand, ObjectClass::Fiber);
    const double secs = seconds_since(t0);
    o.require(scenarios >= 50, "fewer than 50 scenarios");
    o.require(mismatches == 0, std::to_string(mismatches) + " oracle mismatches");
    o.require(std::abs(ap - 0.8350) < 5e-5, "hand AP " + num(ap, 8));
    o.require(secs < 10.0, "runtime " + num(secs, 3) + " s");
    o.detail << scenarios << " scenarios x 2 modes x 10 IoU thresholds, 0 mismatches; hand AP " << num(ap, 6) << "; "
             << num(secs, 3) << " s";
}

// ---------------------------------------------------------------------------

void morphometry_oracles(Outcome& o) {
    const auto t0 = Clock::now();
    double worst_w = 0, worst_l0 = 0, worst_l45 = 0, worst_disk = 0;
    int shapes = 0;
    for (double length : {50.0, 100.0, 200.0, 400.0})
        for (double width : {6.0, 10.0, 20.0, 40.0})
            for (double deg : {0.0, 45.0, 90.0}) {
                const int size = int(length + width) + 12;
                const BinaryMask m = oracle::rasterize(oracle::bar(size / 2.0, size / 2.0, length, width, deg), size, size);
                const MorphometryRecord r = measure_mask(m, CalibrationConfig{});
                const double w_err = std::abs(r.width_px - width);
                const double l_err = std::abs(r.length_px - length) / length;
                worst_w = std::max(worst_w, w_err);
                (deg == 45.0 ? worst_l45 : worst_l0) = std::max(deg == 45.0 ? worst_l45 : worst_l0, l_err);
                ++shapes;
            }
    for (double radius : {5.0, 8.0, 12.5, 20.0, 31.0, 45.0}) {
        const int size = int(2 * radius) + 12;
        const BinaryMask d = oracle::disk(size, size, size / 2.0 + 0.3, size / 2.0 - 0.2, radius);
        worst_disk = std::max(worst_disk, std::abs(measure_mask(d, CalibrationConfig{}).width_px - 2 * radius));
        ++shapes;
    }
    const double secs = seconds_since(t0);
    o.require(worst_w <= 1.0, "bar width error " + num(worst_w) + " px");
    o.require(worst_l0 <= 0.05, "0/90 deg length error " + num(100 * worst_l0) + "%");
    o.require(worst_l45 <= 0.07, "45 deg length error " + num(100 * worst_l45) + "%");
    o.require(worst_disk <= 1.0, "disk width error " + num(worst_disk) + " px");
    o.require(secs < 30.0, "runtime " + num(secs, 3) + " s");
    o.detail << shapes << " shapes; worst width " << num(worst_w, 3) << " px, length " << num(100 * worst_l0, 3)
             << "% (0/90) and " << num(100 * worst_l45, 3) << "% (45), disk " << num(worst_disk, 3) << " px; "
             << num(secs, 3) << " s";
}

// ---------------------------------------------------------------------------

void scale_invariance(Outcome& o) {
    const auto t0 = Clock::now();
    constexpr int kSize = 8192;
    auto objects = testing::plant_objects(kSize, kSize, 200, 240, 5400);
    // Objects crossing the canvas edge must all be excluded.
    for (int i = 0; i < 8; ++i) {
        const double along = 600 + i * 900;
        Polygon p = i % 4 == 0   ? testing::rotated_bar(3, along, 120, 10, 0)
                    : i % 4 == 1 ? testing::rotated_bar(kSize - 3, along, 120, 10, 0)
                    : i % 4 == 2 ? testing::rotated_bar(along, 3, 120, 10, 90)
                                 : testing::ellipse(along, kSize - 2, 20, 16);
        const PixelRect f = testing::footprint_of(p);
        objects.push_back({i % 4 == 3 ? ObjectClass::Vessel : ObjectClass::Fiber, std::move(p), f});
    }
    const testing::SceneSource scene(kSize, kSize, objects);

    AnalysisParams params;
    params.tile_size = 1024;
    params.overlap = 256;
    const AnalysisResult r = analyze(ThresholdDetector{}, scene, params);

    int border_survivors = 0;
    for (const auto& d : r.detections) {
        const PixelRect b = d.mask.foreground_bounds();
        border_survivors += b.x0 == 0 || b.y0 == 0 || b.x1 == kSize || b.y1 == kSize;
    }

    // Whole-image reference: each planted object's own mask measured directly.
    std::vector<double> direct[3], tiled[3];
    for (std::size_t i = 0; i < 200; ++i) {
        const auto& obj = objects[i];
        const auto rec = measure(Detection::from_mask(obj.cls, 1.0, scene.truth_mask(i)), params.calibration);
        direct[0].push_back(rec.length_um);
        direct[1].push_back(rec.width_um);
        direct[2].push_back(rec.area_um2);
    }
    for (const auto& rec : r.records) {
        tiled[0].push_back(rec.length_um);
        tiled[1].push_back(rec.width_um);
        tiled[2].push_back(rec.area_um2);
    }
    const double secs = seconds_since(t0);
    o.require(r.detections.size() == 200, "merged " + std::to_string(r.detections.size()) + " objects");
    o.require(border_survivors == 0, std::to_string(border_survivors) + " border survivors");
    o.detail << r.tiles << " tiles, " << r.detections.size() << " objects, " << r.border_excluded
             << " border objects excluded, " << border_survivors << " border survivors";
    const char* names[3] = {"length", "width", "area"};
    for (int k = 0; k < 3; ++k) {
        if (tiled[k].size() < 2) {
            o.require(false, "too few measurements");
            break;
        }
        const SampleGroup a("direct", direct[k]), b("tiled", tiled[k]);
        const double rel = std::abs(b.mean() - a.mean()) / a.mean();
        double p = 1.0;
        try {
            p = t_test(a, b).p_value;
        } catch (const StatisticsError&) {
            // Identical constant groups: no difference to test.
        }
        o.require(rel <= 0.01, std::string(names[k]) + " mean differs by " + num(100 * rel) + "%");
        o.require(p > 0.5, std::string(names[k]) + " p = " + num(p));
        o.detail << "; " << names[k] << " mean diff " << num(100 * rel, 3) << "%, p " << num(p, 4);
    }
    o.require(secs < 120.0, "runtime " + num(secs, 3) + " s");
    o.detail << "; " << num(secs, 3) << " s";
}

// ---------------------------------------------------------------------------

void dedup_nms_equivalence(Outcome& o) {
    int instances = 0, mismatches = 0;
    {
        std::mt19937_64 rng(83001);
        std::uniform_int_distribution<int> conf(1, 6), cls(0, 1);
        for (int inst = 0; inst < 100; ++inst, ++instances) {
            std::vector<Detection> d;
            for (int i = 0; i < 15; ++i)
                d.push_back(oracle::random_blob(rng, 28, ObjectClass(cls(rng)), conf(rng) / 6.0));
            for (double t : {0.2, 0.5}) {
                const auto want = oracle::oracle_dedup(d, t, 40);
                const auto got = dedup(d, t);
                bool same = got.size() == want.size();
                for (std::size_t i = 0; same && i < got.size(); ++i)
                    same = got[i].mask == d[want[i]].mask && got[i].confidence == d[want[i]].confidence;
                mismatches += !same;
            }
        }
    }
    {
        std::mt19937_64 rng(71001);
        std::uniform_real_distribution<double> pos(0, 60), size(4, 30);
        std::uniform_int_distribution<int> conf(1, 8), cls(0, 1);
        for (int inst = 0; inst < 100; ++inst, ++instances) {
            std::vector<Candidate> c;
            for (int i = 0; i < 20; ++i) {
                const double gx = std::round(pos(rng) / 4) * 4, gy = std::round(pos(rng) / 4) * 4;
                c.push_back({{gx, gy, gx + std::round(size(rng)), gy + std::round(size(rng))},
                             cls(rng),
                             float(conf(rng) / 8.0),
                             {},
                             i});
            }
            for (double t : {0.3, 0.5, 0.7}) {
                std::vector<int> got;
                for (const auto& k : nms(c, t)) got.push_back(k.anchor);
                mismatches += got != oracle::oracle_nms(c, t);
            }
        }
    }
    o.require(mismatches == 0, std::to_string(mismatches) + " mismatches");
    o.detail << "100 dedup + 100 NMS instances, " << mismatches << " mismatches";
}

// ---------------------------------------------------------------------------

void statistics_check(Outcome& o) {
    const auto same = t_test(SampleGroup("a", {1, 2, 3}), SampleGroup("b", {1, 2, 3}));
    o.require(same.t == 0.0 && same.p_value == 1.0, "identical groups t " + num(same.t) + " p " + num(same.p_value));

    // Published two-sided critical values: P(|T| >= t) is 0.05 and 0.01.
    struct Row {
        double df, t, p;
    };
    const Row table[] = {{1, 12.706204736, 0.05},  {4, 2.776445105, 0.05},  {10, 2.228138852, 0.05},
                         {100, 1.983971518, 0.05}, {1, 63.656741163, 0.01}, {4, 4.604094871, 0.01},
                         {10, 3.169272673, 0.01},  {100, 2.625890521, 0.01}};
    double worst = 0;
    for (const auto& row : table) worst = std::max(worst, std::abs(student_t_two_sided(row.t, row.df) - row.p));
    o.require(worst <= 1e-6, "table deviation " + num(worst));

    const auto ex = t_test(SampleGroup("a", {2, 4, 6}), SampleGroup("b", {1, 3, 5}));
    o.require(std::abs(ex.t - 0.6124) < 1e-4, "example t " + num(ex.t));
    o.require(ex.degrees_freedom == 4, "example df " + num(ex.degrees_freedom));
    const bool p_ok = std::abs(ex.p_value - 0.576) <= 1e-3;
    if (!p_ok) {
        o.require(false, "example p = " + num(ex.p_value, 7) + " vs stated 0.576 +- 1e-3");
        // Pooled t = 0.612372, df 4 gives p = 0.573392 by any reference; the
        // stated 0.576 is itself off, so this is reported but tolerated.
        o.known_reference_error = std::abs(ex.p_value - 0.5733922538) < 1e-9;
    }
    o.detail << "; identical t 0 p 1; example t " << num(ex.t, 6) << " df 4; table max deviation " << num(worst, 3);
    if (o.known_reference_error) o.detail << " [known reference-value error: exact p is 0.573392]";
}

// ---------------------------------------------------------------------------

void unit_conversion(Outcome& o) {
    MorphometryRecord r;
    r.object_id = 1;
    r.length_px = 100;
    r.width_px = 10;
    r.area_px2 = 100;
    apply_calibration(r, CalibrationConfig{0.65});
    PlacedMask m{0, 0, BinaryMask(10, 10)};
    m.local.set(0, 0);
    m.local.set(1, 0);
    m.local.set(0, 1);
    const std::string csv = measurements_csv({Detection::from_mask(ObjectClass::Fiber, 0.5, m)}, {r});
    const std::string row = csv.substr(csv.find('\n') + 1);
    o.require(r.length_um == 65.0, "length_um " + num(r.length_um, 17));
    o.require(row.rfind("1,fiber,65.000,6.500,42.250,", 0) == 0, "CSV row " + row);
    o.detail << "100 px -> " << row.substr(8, 6) << " um, 100 px2 -> 42.250 um2";
}

// ---------------------------------------------------------------------------

// Stub backend: fixed detections, two of them overlapping.
class InjectedDetector : public Detector {
public:
    std::vector<Detection> detect(const RgbImage&) const override {
        const auto rect = [](ObjectClass c, double conf, PixelRect r) {
            PlacedMask m{r.x0, r.y0, BinaryMask(r.width(), r.height())};
            for (int y = 0; y < r.height(); ++y)
                for (int x = 0; x < r.width(); ++x) m.local.set(x, y);
            return Detection::from_mask(c, conf, m);
        };
        return {rect(ObjectClass::Fiber, 0.91, {20, 40, 220, 52}), rect(ObjectClass::Fiber, 0.83, {100, 10, 112, 150}),
                rect(ObjectClass::Vessel, 0.77, {240, 100, 290, 160}), rect(ObjectClass::Fiber, 0.30, {30, 170, 90, 178})};
    }
    std::string name() const override { return "injected"; }
};

void service_contract(Outcome& o) {
    const fs::path root = fs::temp_directory_path() / ("fiberscope_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const auto detector = std::make_shared<InjectedDetector>();
    const RgbImage image(320, 200, 210);
    const auto png = encode_png(image);
    std::string id, csv;
    std::vector<std::uint8_t> zip, overlay;
    std::size_t detections = 0;
    {
        JobStore store(root, detector);
        id = store.submit(png, "slide.png", AnalysisParams{});
        o.require(store.wait(id, std::chrono::seconds(60)) == JobState::Done, "job did not finish");
        if (!o.pass) return;
        const auto r = store.result(id);
        detections = r->detections.size();
        csv = store.csv(id);
        zip = store.masks_zip(id);
        overlay = store.overlay_png(id, 0.5);
        o.require(detections == 4, "detections " + std::to_string(detections));
        o.require(std::size_t(std::count(csv.begin(), csv.end(), '\n')) == detections + 1, "CSV row count");
        const auto entries = read_zip(zip);
        o.require(entries.size() == detections + 1, "mask archive entries");
        if (entries.size() >= 2) {
            const BinaryMask a = decode_mask_png(entries[0].data), b = decode_mask_png(entries[1].data);
            std::int64_t both = 0;
            for (int y = 0; y < a.height(); ++y)
                for (int x = 0; x < a.width(); ++x) both += a.at(x, y) && b.at(x, y);
            o.require(a.width() == 320 && a.height() == 200, "mask size");
            o.require(both == 12 * 12, "overlap " + std::to_string(both) + " px");
            for (std::size_t i = 0; i < detections; ++i)
                o.require(decode_mask_png(entries[i].data) == r->detections[i].mask.to_canvas(320, 200),
                          "mask " + std::to_string(i + 1) + " round trip");
        }
        o.require(decode_image(store.overlay_png(id, 1.0)) == image, "cutoff 1.0 overlay changed the image");
        o.require(decode_image(overlay).width() == 320, "overlay size");
        o.require(store.csv(id) == csv && store.masks_zip(id) == zip && store.overlay_png(id, 0.5) == overlay,
                  "re-export differs");
        o.require(!store.get("0000000000000000"), "unknown id found");
    }
    {
        JobStore again(root, detector);
        const auto info = again.get(id);
        o.require(info && info->state == JobState::Done, "job lost after restart");
        if (info && info->state == JobState::Done)
            o.require(again.csv(id) == csv && again.masks_zip(id) == zip && again.overlay_png(id, 0.5) == overlay,
                      "exports changed after restart");
    }
    fs::remove_all(root);
    o.detail << "stub backend, " << detections << " detections, CSV " << csv.size() << " B, masks.zip " << zip.size()
             << " B; overlap 144 px preserved; byte-identical re-export and after restart";
}

// ---------------------------------------------------------------------------

void performance(Outcome& o) {
    constexpr int kSize = 4096;
    // About 20 objects per 1024 x 1024 tile.
    const auto objects = testing::plant_objects(kSize, kSize, 320, 200, 909);
    const testing::SceneSource scene(kSize, kSize, objects);
    AnalysisParams params;
    params.workers = 1;
    const auto t0 = Clock::now();
    const AnalysisResult r = analyze(ThresholdDetector{}, scene, params);
    const double secs = seconds_since(t0);
    const double rate = double(r.tiles) / secs;
    o.require(rate >= 4.0, "rate " + num(rate, 3) + " tiles/s");
    o.require(r.detections.size() == objects.size(), "objects " + std::to_string(r.detections.size()));
    o.detail << r.tiles << " tiles, " << r.detections.size() << " objects on one core in " << num(secs, 3) << " s = "
             << num(rate, 3) << " tiles/s (tile read + threshold detection " << num(r.inference_seconds, 3)
             << " s, morphometry " << num(r.measure_seconds, 3) << " s)";
}

void model_latency_info() {
    const char* model = std::getenv("FIBERSCOPE_MODEL");
    if (!model || !fs::exists(model)) {
        std::cout << "INFO model latency: skipped (set FIBERSCOPE_MODEL to a 1024-input model)\n";
        return;
    }
    try {
        SessionConfig c;
        c.model_path = model;
        const OnnxDetector det(c);
        const RgbImage img(1024, 1024, 200);
        det.detect(img);
        const auto t0 = Clock::now();
        constexpr int kRuns = 5;
        for (int i = 0; i < kRuns; ++i) det.detect(img);
        std::cout << "INFO model latency: " << num(1000 * seconds_since(t0) / kRuns, 4)
                  << " ms per 1024x1024 image (reference 140 ms)\n";
    } catch (const std::exception& e) {
        std::cout << "INFO model latency: " << e.what() << "\n";
    }
}

void integration_check() {
    const char* model = std::getenv("FIBERSCOPE_MODEL");
    const char* images = std::getenv("FIBERSCOPE_STUDY_IMAGES");
    if (!model || !images) {
        std::cout << "SKIP released-model integration: set FIBERSCOPE_MODEL and FIBERSCOPE_STUDY_IMAGES "
                     "(comma-separated) to run\n";
        return;
    }
    try {
        SessionConfig c;
        c.model_path = model;
        const OnnxDetector det(c);
        int fibers = 0, vessels = 0;
        double length_sum = 0;
        std::stringstream list(images);
        for (std::string path; std::getline(list, path, ',');) {
            const auto src = open_image_source(path);
            const auto r = analyze(det, *src, AnalysisParams{});
            for (const auto& rec : r.records) {
                if (rec.object_class == ObjectClass::Fiber) {
                    ++fibers;
                    length_sum += rec.length_um;
                } else {
                    ++vessels;
                }
            }
        }
        const double mean = fibers ? length_sum / fibers : 0.0;
        const bool ok = std::abs(fibers - 1818) <= 0.05 * 1818 && std::abs(vessels - 62) <= 0.10 * 62 &&
                        std::abs(mean - 310) <= 0.10 * 310;
        std::cout << (ok ? "PASS" : "FAIL") << " released-model integration: fibers " << fibers << " (1818 +-5%), vessels "
                  << vessels << " (62 +-10%), mean fiber length " << num(mean, 5) << " um (310 +-10%)\n";
    } catch (const std::exception& e) {
        std::cout << "FAIL released-model integration: " << e.what() << "\n";
    }
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<void(Outcome&)>> criteria[] = {
        {"metric oracle suite", metric_oracles},
        {"morphometry oracle suite", morphometry_oracles},
        {"scale invariance", scale_invariance},
        {"dedup/NMS equivalence", dedup_nms_equivalence},
        {"statistics", statistics_check},
        {"unit conversion", unit_conversion},
        {"service contract", service_contract},
        {"performance", performance},
    };
    int unexpected = 0, known = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            run(o);
        } catch (const std::exception& e) {
            o.require(false, std::string("exception: ") + e.what());
            o.known_reference_error = false;
        }
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
        if (!o.pass) ++(o.known_reference_error ? known : unexpected);
    }
    model_latency_info();
    integration_check();
    std::cout << "summary: " << unexpected << " unexpected failure(s), " << known << " known reference-value error(s)\n";
    return unexpected == 0 ? 0 : 1;
}
