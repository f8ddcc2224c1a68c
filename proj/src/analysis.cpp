#include "fiberscope/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <thread>

#include "json.hpp"

namespace fiberscope {

using nlohmann::json;

namespace {

void check_unit(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument(std::string(name) + " must be in [0, 1]");
}

json rle(const PlacedMask& m) {
    json runs = json::array();
    std::uint8_t current = 0;
    std::int64_t n = 0;
    for (std::uint8_t b : m.local.bits()) {
        if (b != current) {
            runs.push_back(n);
            current = b;
            n = 0;
        }
        ++n;
    }
    runs.push_back(n);
    return {{"x", m.x}, {"y", m.y}, {"w", m.local.width()}, {"h", m.local.height()}, {"runs", runs}};
}

PlacedMask unrle(const json& j) {
    const int w = j.at("w"), h = j.at("h");
    std::vector<std::uint8_t> bits;
    bits.reserve(std::size_t(w) * h);
    std::uint8_t v = 0;
    for (const auto& r : j.at("runs")) {
        bits.insert(bits.end(), r.get<std::int64_t>(), v);
        v ^= 1;
    }
    if (bits.size() != std::size_t(w) * h) throw ParseError("mask run lengths do not cover the mask");
    return {j.at("x").get<int>(), j.at("y").get<int>(), BinaryMask(w, h, std::move(bits))};
}

}  // namespace

void AnalysisParams::validate() const {
    check_unit(inference.conf_threshold, "conf");
    check_unit(inference.iou_threshold, "iou");
    check_unit(dedup_iou, "dedup_iou");
    if (!(inference.mask.threshold > 0.0 && inference.mask.threshold < 1.0))
        throw InvalidArgument("mask_threshold must be in (0, 1)");
    if (!(inference.mask.box_dilation >= 0.0)) throw InvalidArgument("box_dilation must be >= 0");
    if (tile_size < 32) throw InvalidArgument("tile must be >= 32");
    if (overlap < 0 || overlap >= tile_size) throw InvalidArgument("overlap must be in [0, tile)");
    if (border_margin < 0) throw InvalidArgument("border_margin must be >= 0");
    if (workers < 0) throw InvalidArgument("workers must be >= 0");
    calibration.validate();
}

std::string params_to_json(const AnalysisParams& p) {
    return json{{"conf", p.inference.conf_threshold},
                {"iou", p.inference.iou_threshold},
                {"mask_threshold", p.inference.mask.threshold},
                {"box_dilation", p.inference.mask.box_dilation},
                {"tile", p.tile_size},
                {"overlap", p.overlap},
                {"dedup_iou", p.dedup_iou},
                {"border_margin", p.border_margin},
                {"px_um", p.calibration.microns_per_pixel},
                {"workers", p.workers}}
        .dump();
}

AnalysisParams params_from_json(const std::string& text, AnalysisParams p) {
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw ParseError("parameters must be a JSON object");
        const auto get = [&](const char* key, auto& into) {
            if (j.contains(key)) into = j.at(key).get<std::decay_t<decltype(into)>>();
        };
        get("conf", p.inference.conf_threshold);
        get("iou", p.inference.iou_threshold);
        get("mask_threshold", p.inference.mask.threshold);
        get("box_dilation", p.inference.mask.box_dilation);
        get("tile", p.tile_size);
        get("overlap", p.overlap);
        get("dedup_iou", p.dedup_iou);
        get("border_margin", p.border_margin);
        get("px_um", p.calibration.microns_per_pixel);
        get("workers", p.workers);
    } catch (const json::exception& e) {
        throw ParseError(std::string("parameters: ") + e.what());
    }
    return p;
}

std::array<ClassSummary, kNumClasses> AnalysisResult::summary() const {
    std::array<ClassSummary, kNumClasses> s{};
    for (const auto& r : records) {
        auto& c = s[class_index(r.object_class)];
        ++c.count;
        c.mean_length_um += r.length_um;
        c.mean_width_um += r.width_um;
        c.mean_area_um2 += r.area_um2;
    }
    for (auto& c : s)
        if (c.count) {
            c.mean_length_um /= c.count;
            c.mean_width_um /= c.count;
            c.mean_area_um2 /= c.count;
        }
    return s;
}

std::vector<MorphometryRecord> measure_all(const std::vector<Detection>& detections,
                                           const CalibrationConfig& calibration, int workers,
                                           int* fallbacks) {
    calibration.validate();
    std::vector<MorphometryRecord> out(detections.size());
    std::atomic<std::size_t> next{0};
    std::atomic<int> fell_back{0};
    const auto work = [&] {
        for (std::size_t i = next++; i < detections.size(); i = next++) {
            const Detection& d = detections[i];
            MorphometryRecord r;
            try {
                r = measure(d, calibration);
            } catch (const EmptyGeometryError&) {
                const PixelRect b = d.mask.foreground_bounds();
                r.object_class = d.object_class;
                r.confidence = d.confidence;
                r.length_px = std::max(b.width(), b.height());
                r.width_px = std::min(b.width(), b.height());
                r.area_px2 = double(d.mask.count());
                apply_calibration(r, calibration);
                ++fell_back;
            }
            r.object_id = int(i) + 1;
            out[i] = r;
        }
    };
    int n = workers > 0 ? workers : int(std::thread::hardware_concurrency());
    n = std::clamp(n, 1, int(std::max<std::size_t>(detections.size(), 1)));
    if (n == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < n; ++w) pool.emplace_back(work);
    }
    if (fallbacks) *fallbacks = fell_back;
    return out;
}

AnalysisResult analyze(const Detector& detector, const ImageSource& source, const AnalysisParams& params) {
    params.validate();
    AnalysisResult res;
    res.image_width = source.width();
    res.image_height = source.height();
    if (res.image_width < params.tile_size || res.image_height < params.tile_size)
        res.warnings.push_back("image smaller than tile (" + std::to_string(res.image_width) + "x" +
                               std::to_string(res.image_height) + " < " + std::to_string(params.tile_size) + ")");

    const TileGrid grid = plan_tiles(res.image_width, res.image_height, params.tile_size, params.overlap);
    TilingOptions topt;
    topt.workers = params.workers;
    topt.merge = {params.dedup_iou, params.border_margin};
    topt.inference = params.inference;
    TiledRun run = run_tiled(detector, source, grid, topt);

    // Reorder by confidence so ids follow the export order.
    std::vector<std::size_t> order(run.merged.detections.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return confidence_order(run.merged.detections[a], run.merged.detections[b]);
    });
    for (std::size_t i : order) {
        res.detections.push_back(std::move(run.merged.detections[i]));
        res.provenance.push_back(std::move(run.merged.provenance[i]));
    }
    res.duplicates_removed = run.merged.duplicates_removed;
    res.border_excluded = run.merged.border_excluded;
    res.fragments_joined = run.merged.fragments_joined;
    res.tiles = run.tiles;
    res.inference_seconds = run.seconds;

    const auto t0 = std::chrono::steady_clock::now();
    int fallbacks = 0;
    res.records = measure_all(res.detections, params.calibration, params.workers, &fallbacks);
    res.measure_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (fallbacks)
        res.warnings.push_back(std::to_string(fallbacks) +
                               " objects too small to skeletonize; length and width taken from bounds");

    const int extent = longest_extent(res.detections);
    if (grid.tiles.size() > 1 && extent * 10 >= params.overlap * 9)
        res.warnings.push_back("longest object extent " + std::to_string(extent) +
                               " px approaches the tile overlap " + std::to_string(params.overlap) +
                               " px; objects may be cut at tile seams");
    return res;
}

std::string result_to_json(const AnalysisResult& r) {
    json dets = json::array();
    for (std::size_t i = 0; i < r.detections.size(); ++i) {
        const Detection& d = r.detections[i];
        const MorphometryRecord& m = r.records.at(i);
        dets.push_back({{"object_id", m.object_id},
                        {"class", std::string(class_name(d.object_class))},
                        {"confidence", d.confidence},
                        {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}},
                        {"mask", rle(d.mask)},
                        {"tiles", r.provenance.at(i)},
                        {"length_px", m.length_px},
                        {"width_px", m.width_px},
                        {"area_px2", m.area_px2},
                        {"length_um", m.length_um},
                        {"width_um", m.width_um},
                        {"area_um2", m.area_um2},
                        {"skeleton_pixels", m.skeleton_pixels}});
    }
    return json{{"image_width", r.image_width},
                {"image_height", r.image_height},
                {"detections", dets},
                {"duplicates_removed", r.duplicates_removed},
                {"border_excluded", r.border_excluded},
                {"fragments_joined", r.fragments_joined},
                {"tiles", r.tiles},
                {"inference_seconds", r.inference_seconds},
                {"measure_seconds", r.measure_seconds},
                {"warnings", r.warnings}}
        .dump();
}

AnalysisResult result_from_json(const std::string& text) {
    AnalysisResult r;
    try {
        const json j = json::parse(text);
        r.image_width = j.at("image_width");
        r.image_height = j.at("image_height");
        r.duplicates_removed = j.at("duplicates_removed");
        r.border_excluded = j.at("border_excluded");
        r.fragments_joined = j.value("fragments_joined", 0);
        r.tiles = j.at("tiles");
        r.inference_seconds = j.at("inference_seconds");
        r.measure_seconds = j.at("measure_seconds");
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
        for (const auto& d : j.at("detections")) {
            const auto cls = parse_class(d.at("class").get<std::string>());
            if (!cls) throw ParseError("unknown class " + d.at("class").dump());
            const auto b = d.at("box").get<std::vector<double>>();
            if (b.size() != 4) throw ParseError("box needs 4 numbers");
            r.detections.push_back(Detection::from_mask(*cls, d.at("confidence"), unrle(d.at("mask")),
                                                        BoundingBox{b[0], b[1], b[2], b[3]}));
            r.provenance.push_back(d.at("tiles").get<std::vector<int>>());
            MorphometryRecord m;
            m.object_id = d.at("object_id");
            m.object_class = *cls;
            m.confidence = d.at("confidence");
            m.length_px = d.at("length_px");
            m.width_px = d.at("width_px");
            m.area_px2 = d.at("area_px2");
            m.length_um = d.at("length_um");
            m.width_um = d.at("width_um");
            m.area_um2 = d.at("area_um2");
            m.skeleton_pixels = d.at("skeleton_pixels");
            r.records.push_back(m);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("results: ") + e.what());
    } catch (const Error& e) {
        throw ParseError(std::string("results: ") + e.what());
    }
    return r;
}

}  // namespace fiberscope
