#include "fiberscope/batch.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "fiberscope/error.hpp"
#include "fiberscope/image_source.hpp"
#include "json.hpp"

namespace fiberscope {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<GroundTruth> ground_truth_of(const AnnotatedImage& image) {
    std::vector<GroundTruth> out;
    const PixelRect canvas{0, 0, image.width, image.height};
    for (const auto& o : image.objects)
        if (auto m = rasterize_placed(o.polygon, canvas)) out.push_back({o.object_class, std::move(*m)});
    return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= line.size(); ++i)
        if (i == line.size() || line[i] == ',') {
            out.push_back(line.substr(start, i - start));
            start = i + 1;
        }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

std::string fixed(double v, int decimals) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
    return std::string(buf, r.ptr);
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.insert(0, width - s.size(), ' ');
    return s;
}

}  // namespace

std::vector<double> read_csv_column(std::string_view csv, std::string_view column,
                                    std::optional<ObjectClass> only) {
    std::vector<double> out;
    std::optional<std::size_t> col, cls_col;
    std::size_t fields = 0;
    int line_no = 0;
    while (!csv.empty()) {
        const auto nl = csv.find('\n');
        const std::string_view line = trim(csv.substr(0, nl));
        csv.remove_prefix(nl == std::string_view::npos ? csv.size() : nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto f = split_fields(line);
        if (!col) {
            for (std::size_t i = 0; i < f.size(); ++i) {
                if (trim(f[i]) == column) col = i;
                if (trim(f[i]) == "class") cls_col = i;
            }
            if (!col) throw ParseError("CSV has no column '" + std::string(column) + "'");
            if (only && !cls_col) throw ParseError("CSV has no 'class' column");
            fields = f.size();
            continue;
        }
        if (f.size() != fields)
            throw ParseError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(fields) +
                             " fields, got " + std::to_string(f.size()));
        if (only) {
            const auto c = parse_class(trim(f[*cls_col]));
            if (!c) throw ParseError("CSV line " + std::to_string(line_no) + ": unknown class");
            if (*c != *only) continue;
        }
        const auto text = trim(f[*col]);
        double v = 0;
        const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
        if (r.ec != std::errc{} || r.ptr != text.data() + text.size())
            throw ParseError("CSV line " + std::to_string(line_no) + ": not a number: " + std::string(text));
        out.push_back(v);
    }
    if (!col) throw ParseError("CSV is empty");
    return out;
}

std::string evaluation_to_json(const EvaluationReport& r) {
    json j;
    j["mode"] = to_string(r.mode);
    j["operating_cutoff"] = r.operating_cutoff;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["map50"] = r.map50;
    j["map50_95"] = r.map50_95;
    json classes = json::object();
    for (ObjectClass c : kAllClasses) {
        const auto& m = r.per_class[class_index(c)];
        json t = json::object();
        for (int k = 0; k < kNumIouThresholds; ++k)
            t[fixed(iou_threshold_at(k), 2)] = opt(r.map.table[class_index(c)][k]);
        classes[std::string(class_name(c))] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                                               {"ap50", opt(m.ap50)},     {"ap50_95", opt(m.ap50_95)},
                                               {"truth_count", m.truth_count}, {"ap_by_iou", t}};
    }
    j["classes"] = classes;
    j["notices"] = r.notices;
    return j.dump(2) + "\n";
}

std::string evaluation_table(const EvaluationReport& r) {
    std::ostringstream o;
    o << "mode " << to_string(r.mode) << ", P/R/F1 at confidence >= " << fixed(r.operating_cutoff, 3) << "\n";
    o << "class      truth  precision  recall     f1   mAP50  mAP50-95\n";
    const auto na = [](const std::optional<double>& v) { return v ? fixed(*v, 3) : std::string("n/a"); };
    for (ObjectClass c : kAllClasses) {
        const auto& m = r.per_class[class_index(c)];
        std::string name(class_name(c));
        name.resize(8, ' ');
        o << name << pad(std::to_string(m.truth_count), 7) << pad(fixed(m.precision, 3), 11)
          << pad(fixed(m.recall, 3), 8) << pad(fixed(m.f1, 3), 7) << pad(na(m.ap50), 8) << pad(na(m.ap50_95), 10)
          << "\n";
    }
    int truths = 0;
    for (const auto& m : r.per_class) truths += m.truth_count;
    o << "all     " << pad(std::to_string(truths), 7) << pad(fixed(r.precision, 3), 11) << pad(fixed(r.recall, 3), 8)
      << pad(fixed(r.f1, 3), 7) << pad(fixed(r.map50, 3), 8) << pad(fixed(r.map50_95, 3), 10) << "\n";
    for (const auto& n : r.notices) o << "note: " << n << "\n";
    return o.str();
}

std::string pr_curve_table(const EvaluationReport& r) {
    std::ostringstream o;
    o << "recall";
    for (ObjectClass c : kAllClasses) o << '\t' << class_name(c);
    o << '\n';
    for (int i = 0; i <= 100; ++i) {
        o << fixed(i / 100.0, 2);
        for (ObjectClass c : kAllClasses) o << '\t' << fixed(r.pr_curves[class_index(c)][i], 6);
        o << '\n';
    }
    return o.str();
}

std::string f1_curve_table(const EvaluationReport& r) {
    std::ostringstream o;
    o << "cutoff\tprecision\trecall\tf1";
    for (ObjectClass c : kAllClasses) o << "\tf1_" << class_name(c);
    o << '\n';
    const auto& fc = r.f1_curve;
    for (std::size_t i = 0; i < fc.cutoffs.size(); ++i) {
        const auto& a = fc.aggregate[i];
        o << fixed(fc.cutoffs[i], 6) << '\t' << fixed(a.precision, 6) << '\t' << fixed(a.recall, 6) << '\t'
          << fixed(a.f1, 6);
        for (ObjectClass c : kAllClasses) {
            const auto& pc = fc.per_class[class_index(c)];
            o << '\t' << fixed(i < pc.size() ? pc[i].f1 : 0.0, 6);
        }
        o << '\n';
    }
    return o.str();
}

std::string group_report_to_json(const GroupReport& r) {
    json j;
    j["metric"] = r.metric;
    j["quantile_method"] = r.quantile_method;
    j["variant"] = to_string(r.variant);
    j["groups"] = json::array();
    for (const auto& g : r.groups)
        j["groups"].push_back({{"label", g.label}, {"n", g.n}, {"mean", g.mean}, {"sd", g.sd}, {"min", g.min},
                               {"q1", g.q1}, {"median", g.median}, {"q3", g.q3}, {"max", g.max}});
    j["comparisons"] = json::array();
    for (const auto& c : r.comparisons) {
        json e{{"first", r.groups[c.first].label},
               {"second", r.groups[c.second].label},
               {"mean_difference_percent", c.mean_difference_percent}};
        if (c.test) {
            // JSON has no infinity; a t of +-inf is written as a string.
            e["t"] = std::isfinite(c.test->t) ? json(c.test->t) : json(c.test->t > 0 ? "inf" : "-inf");
            e["df"] = c.test->degrees_freedom;
            e["p_value"] = c.test->p_value;
            e["sed"] = c.test->sed;
        } else {
            e["t"] = nullptr;
            e["p_value"] = nullptr;
        }
        j["comparisons"].push_back(e);
    }
    return j.dump(2) + "\n";
}

std::string group_report_table(const GroupReport& r) {
    std::ostringstream o;
    o << r.metric << " (quartiles: " << r.quantile_method << ", t-test: " << to_string(r.variant) << ")\n";
    o << "group             n       mean         sd        min         q1     median         q3        max\n";
    for (const auto& g : r.groups) {
        std::string label = g.label;
        label.resize(std::max<std::size_t>(label.size(), 12), ' ');
        o << label << pad(std::to_string(g.n), 7);
        for (double v : {g.mean, g.sd, g.min, g.q1, g.median, g.q3, g.max}) o << pad(fixed(v, 3), 11);
        o << "\n";
    }
    for (const auto& c : r.comparisons) {
        o << r.groups[c.first].label << " vs " << r.groups[c.second].label << ": difference "
          << fixed(c.mean_difference_percent, 2) << "%";
        if (c.test) {
            std::ostringstream p;
            p.precision(4);
            p << c.test->p_value;
            o << ", t = " << fixed(c.test->t, 4) << ", df = " << fixed(c.test->degrees_freedom, 2)
              << ", p = " << p.str();
        } else {
            o << ", t undefined (both groups constant)";
        }
        o << "\n";
    }
    return o.str();
}

RgbImage transform_image(const RgbImage& source, const ImageTransform& t) {
    if (t.identity()) return source;
    const int w = source.width(), h = source.height();
    const auto [ow, oh] = transformed_size(t, w, h);
    // transform_point is affine in continuous coordinates; recover its matrix.
    const Point o = transform_point(t, {0, 0}, w, h);
    const Point ex = transform_point(t, {1, 0}, w, h);
    const Point ey = transform_point(t, {0, 1}, w, h);
    const double a = ex.x - o.x, b = ey.x - o.x, c = ex.y - o.y, d = ey.y - o.y;
    // Shift to OpenCV's integer pixel centers: u = M (x + 0.5) + o - 0.5.
    cv::Mat m = (cv::Mat_<double>(2, 3) << a, b, o.x + 0.5 * (a + b) - 0.5, c, d, o.y + 0.5 * (c + d) - 0.5);
    const cv::Mat src(h, w, CV_8UC3, const_cast<std::uint8_t*>(source.data().data()));
    RgbImage out(ow, oh);
    cv::Mat dst(oh, ow, CV_8UC3, out.data().data());
    const bool exact = t.scale == 1.0 && t.angle_deg == 0.0;
    cv::warpAffine(src, dst, m, dst.size(), exact ? cv::INTER_NEAREST : cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                   cv::Scalar::all(0));
    return out;
}

RgbImage render_sample(const RgbImage& source, const AnnotatedImage& sample) {
    return transform_image(source, sample.transform).crop(sample.window);
}

namespace {

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace

PrepareSummary prepare_dataset(std::string_view via_document, const fs::path& images_dir, const fs::path& out_dir,
                               const PrepareOptions& options) {
    if (options.tile < 32) throw InvalidArgument("tile must be at least 32");
    options.augment.validate();

    std::map<std::string, RgbImage> pixels;
    const auto load = [&](const std::string& name) -> const RgbImage& {
        auto it = pixels.find(name);
        if (it == pixels.end()) it = pixels.emplace(name, read_image(images_dir / name)).first;
        return it->second;
    };
    const ImageSizeLookup sizes = [&](const std::string& name) -> std::optional<std::pair<int, int>> {
        if (!fs::exists(images_dir / name)) return std::nullopt;
        const auto& img = load(name);
        return std::pair{img.width(), img.height()};
    };
    const auto parsed = parse_via_annotations(via_document, sizes);

    PrepareSummary summary;
    summary.source_images = int(parsed.images.size());
    summary.dropped_regions = parsed.dropped_regions;
    summary.skipped_shapes = parsed.skipped_shapes;

    std::vector<AnnotatedImage> samples;
    std::vector<std::string> ids, groups;
    for (const auto& img : parsed.images) {
        if (!fs::exists(images_dir / img.image_path))
            throw IoError("image not found: " + (images_dir / img.image_path).string());
        for (auto& s : crop_to_training_tiles(img, options.tile, options.min_area_fraction)) {
            ids.push_back(s.id);
            groups.push_back(s.source_id);
            samples.push_back(std::move(s));
        }
    }
    DatasetSplit split = split_dataset(ids, options.train_fraction, options.seed, groups);

    const std::set<std::string> train_ids(split.train.begin(), split.train.end());
    std::set<std::string> train_sources;
    for (const auto& s : samples)
        if (train_ids.count(s.id)) train_sources.insert(s.source_id);
    for (const auto& img : parsed.images) {
        if (!train_sources.count(img.source_id)) continue;
        for (const auto& a : augment(img, options.augment))
            for (auto& s : crop_to_training_tiles(a, options.tile, options.min_area_fraction)) {
                split.train.push_back(s.id);
                samples.push_back(std::move(s));
            }
    }

    summary.labels = export_training_labels(samples, split, out_dir);
    const std::set<std::string> train(split.train.begin(), split.train.end());
    for (const auto& s : samples) {
        const char* side = train.count(s.id) ? "train" : "val";
        write_bytes(out_dir / "images" / side / (s.id + ".png"), encode_png(render_sample(load(s.image_path), s)));
    }
    return summary;
}

}  // namespace fiberscope
