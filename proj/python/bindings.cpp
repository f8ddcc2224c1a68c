#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "fiberscope/batch.hpp"
#include "fiberscope/export.hpp"
#include "fiberscope/image_source.hpp"
#include "fiberscope/pipeline.hpp"
#include "fiberscope/threshold_detector.hpp"

namespace py = pybind11;
using namespace fiberscope;

namespace {

using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using ImageArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

BinaryMask to_mask(const MaskArray& a) {
    if (a.ndim() != 2) throw py::value_error("mask must be a 2-D array");
    BinaryMask m(int(a.shape(1)), int(a.shape(0)));
    const auto* src = a.data();
    for (std::size_t i = 0; i < std::size_t(a.size()); ++i) m.row(0)[i] = src[i] ? 1 : 0;
    return m;
}

py::array_t<bool> from_mask(const BinaryMask& m) {
    py::array_t<bool> out({m.height(), m.width()});
    auto* dst = out.mutable_data();
    for (std::size_t i = 0; i < m.bits().size(); ++i) dst[i] = m.bits()[i] != 0;
    return out;
}

RgbImage to_image(const ImageArray& a) {
    if (a.ndim() == 2) {
        RgbImage img(int(a.shape(1)), int(a.shape(0)));
        for (std::size_t i = 0; i < std::size_t(a.size()); ++i) std::fill_n(img.data().data() + 3 * i, 3, a.data()[i]);
        return img;
    }
    if (a.ndim() != 3 || a.shape(2) != 3) throw py::value_error("image must be H x W x 3 (RGB) or H x W");
    RgbImage img(int(a.shape(1)), int(a.shape(0)));
    std::copy(a.data(), a.data() + a.size(), img.data().begin());
    return img;
}

py::array_t<std::uint8_t> from_image(const RgbImage& img) {
    py::array_t<std::uint8_t> out({img.height(), img.width(), 3});
    std::copy(img.data().begin(), img.data().end(), out.mutable_data());
    return out;
}

ObjectClass class_arg(const std::string& name) {
    const auto c = parse_class(name);
    if (!c) throw py::value_error("unknown class " + name);
    return *c;
}

py::object json_loads(const std::string& s) { return py::module_::import("json").attr("loads")(s); }

py::dict record_dict(const MorphometryRecord& r) {
    py::dict d;
    d["object_id"] = r.object_id;
    d["class"] = std::string(class_name(r.object_class));
    d["length_um"] = r.length_um;
    d["width_um"] = r.width_um;
    d["area_um2"] = r.area_um2;
    d["length_px"] = r.length_px;
    d["width_px"] = r.width_px;
    d["area_px2"] = r.area_px2;
    d["confidence"] = r.confidence;
    d["skeleton_pixels"] = r.skeleton_pixels;
    return d;
}

py::tuple box_tuple(const BoundingBox& b) { return py::make_tuple(b.x0, b.y0, b.x1, b.y1); }

AnalysisParams make_params(double conf, double iou, int tile, int overlap, double dedup_iou, int border_margin,
                           double px_um, int workers) {
    AnalysisParams p;
    p.inference.conf_threshold = conf;
    p.inference.iou_threshold = iou;
    p.tile_size = tile;
    p.overlap = overlap;
    p.dedup_iou = dedup_iou;
    p.border_margin = border_margin;
    p.calibration.microns_per_pixel = px_um;
    p.workers = workers;
    p.validate();
    return p;
}

Detection detection_arg(const py::handle& item) {
    const auto t = item.cast<py::tuple>();
    if (t.size() != 3) throw py::value_error("prediction must be (class, confidence, mask)");
    return Detection::from_mask(class_arg(t[0].cast<std::string>()), t[1].cast<double>(),
                                PlacedMask::from_canvas(to_mask(t[2].cast<MaskArray>())));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Fiber and vessel segmentation, morphometry and statistics";

    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<EmptyGeometryError>(m, "EmptyGeometryError", PyExc_ValueError);
    py::register_exception<StatisticsError>(m, "StatisticsError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<SessionError>(m, "SessionError", PyExc_RuntimeError);
    py::register_exception<ModelContractError>(m, "ModelContractError", PyExc_RuntimeError);
    py::register_exception<DimensionMismatchError>(m, "DimensionMismatchError", PyExc_ValueError);

    // geometry
    m.def(
        "rasterize",
        [](const std::vector<std::pair<double, double>>& vertices, int width, int height) {
            std::vector<Point> v;
            for (const auto& [x, y] : vertices) v.push_back({x, y});
            return from_mask(rasterize(Polygon(std::move(v)), width, height));
        },
        py::arg("vertices"), py::arg("width"), py::arg("height"),
        "Mask of the pixels whose centers lie inside the polygon.");
    m.def(
        "mask_iou", [](const MaskArray& a, const MaskArray& b) { return mask_iou(to_mask(a), to_mask(b)); },
        py::arg("a"), py::arg("b"));
    m.def(
        "box_iou",
        [](std::array<double, 4> a, std::array<double, 4> b) {
            return box_iou({a[0], a[1], a[2], a[3]}, {b[0], b[1], b[2], b[3]});
        },
        py::arg("a"), py::arg("b"));
    m.def(
        "contour",
        [](const MaskArray& mask) {
            std::vector<std::pair<double, double>> out;
            for (const auto& p : extract_contour(to_mask(mask)).vertices()) out.emplace_back(p.x, p.y);
            return out;
        },
        py::arg("mask"), "Pixel-edge outline of the mask's largest component.");

    // morphometry
    m.def(
        "measure_mask",
        [](const MaskArray& mask, double px_um, const std::string& length_mode, const std::string& width_mode) {
            MorphometryOptions o;
            if (length_mode == "pixels")
                o.length_mode = LengthMode::PixelCount;
            else if (length_mode != "euclidean")
                throw py::value_error("length_mode must be 'euclidean' or 'pixels'");
            if (width_mode == "centers")
                o.width_mode = WidthMode::PixelCenters;
            else if (width_mode != "subpixel")
                throw py::value_error("width_mode must be 'subpixel' or 'centers'");
            return record_dict(measure_mask(to_mask(mask), CalibrationConfig{px_um}, o));
        },
        py::arg("mask"), py::arg("px_um") = 0.65, py::arg("length_mode") = "euclidean",
        py::arg("width_mode") = "subpixel");
    m.def(
        "distance_transform",
        [](const MaskArray& mask) {
            const BinaryMask bm = to_mask(mask);
            const auto d = distance_transform(bm);
            py::array_t<double> out({bm.height(), bm.width()});
            std::copy(d.begin(), d.end(), out.mutable_data());
            return out;
        },
        py::arg("mask"), "Exact Euclidean distance to the nearest background pixel center.");

    // statistics
    py::enum_<TTestVariant>(m, "TTestVariant").value("POOLED", TTestVariant::Pooled).value("WELCH", TTestVariant::Welch);
    py::class_<TTestResult>(m, "TTestResult")
        .def_readonly("t", &TTestResult::t)
        .def_readonly("df", &TTestResult::degrees_freedom)
        .def_readonly("p_value", &TTestResult::p_value)
        .def_readonly("sed", &TTestResult::sed)
        .def_readonly("variant", &TTestResult::variant)
        .def("__repr__", [](const TTestResult& r) {
            return "TTestResult(t=" + std::to_string(r.t) + ", df=" + std::to_string(r.degrees_freedom) +
                   ", p_value=" + std::to_string(r.p_value) + ")";
        });
    m.def(
        "t_test",
        [](std::vector<double> a, std::vector<double> b, const std::string& variant) {
            if (variant != "pooled" && variant != "welch") throw py::value_error("variant must be 'pooled' or 'welch'");
            return t_test(SampleGroup("a", std::move(a)), SampleGroup("b", std::move(b)),
                          variant == "welch" ? TTestVariant::Welch : TTestVariant::Pooled);
        },
        py::arg("a"), py::arg("b"), py::arg("variant") = "pooled");
    m.def("student_t_two_sided", &student_t_two_sided, py::arg("t"), py::arg("df"));
    m.def("incomplete_beta", &incomplete_beta, py::arg("a"), py::arg("b"), py::arg("x"));
    m.def("quantile", &quantile, py::arg("values"), py::arg("q"));
    m.def(
        "group_report",
        [](const std::vector<std::pair<std::string, std::vector<double>>>& groups, const std::string& metric,
           bool welch) {
            std::vector<SampleGroup> g;
            for (const auto& [label, values] : groups) g.emplace_back(label, values);
            return json_loads(
                group_report_to_json(group_report(g, metric, welch ? TTestVariant::Welch : TTestVariant::Pooled)));
        },
        py::arg("groups"), py::arg("metric") = "length_um", py::arg("welch") = false,
        "groups: list of (label, values) pairs.");
    m.def(
        "read_csv_column",
        [](const std::string& csv, const std::string& column, std::optional<std::string> only) {
            return read_csv_column(csv, column, only ? std::optional(class_arg(*only)) : std::nullopt);
        },
        py::arg("csv"), py::arg("column"), py::arg("object_class") = py::none());

    // evaluation
    m.def(
        "evaluate",
        [](const py::list& images, const std::string& mode) {
            std::vector<EvalImage> ev;
            for (const auto& item : images) {
                const auto d = item.cast<py::dict>();
                EvalImage e;
                for (const auto& p : d["predictions"].cast<py::list>()) e.predictions.push_back(detection_arg(p));
                for (const auto& t : d["truths"].cast<py::list>()) {
                    const auto tt = t.cast<py::tuple>();
                    e.truths.push_back({class_arg(tt[0].cast<std::string>()),
                                        PlacedMask::from_canvas(to_mask(tt[1].cast<MaskArray>()))});
                }
                ev.push_back(std::move(e));
            }
            if (mode != "mask" && mode != "box") throw py::value_error("mode must be 'mask' or 'box'");
            return json_loads(evaluation_to_json(evaluate(ev, mode == "box" ? MatchMode::Box : MatchMode::Mask)));
        },
        py::arg("images"), py::arg("mode") = "mask",
        "images: list of {'predictions': [(class, conf, mask)], 'truths': [(class, mask)]}.");

    // tiling and inference geometry
    m.def(
        "plan_tiles",
        [](int width, int height, int tile, int overlap) {
            std::vector<std::tuple<int, int, int, int>> out;
            for (const auto& t : plan_tiles(width, height, tile, overlap).tiles)
                out.emplace_back(t.rect.x0, t.rect.y0, t.rect.x1, t.rect.y1);
            return out;
        },
        py::arg("width"), py::arg("height"), py::arg("tile") = kDefaultTileSize,
        py::arg("overlap") = kDefaultTileOverlap);
    m.def(
        "letterbox",
        [](int width, int height, int input_size) {
            const auto t = letterbox(width, height, input_size);
            py::dict d;
            d["scale"] = t.scale;
            d["pad_x"] = t.pad_x;
            d["pad_y"] = t.pad_y;
            d["input_size"] = t.input_size;
            return d;
        },
        py::arg("width"), py::arg("height"), py::arg("input_size") = 1024);

    // detectors and analysis
    py::class_<Detector, std::shared_ptr<Detector>>(m, "Detector").def_property_readonly("name", &Detector::name);
    py::class_<ThresholdDetector, Detector, std::shared_ptr<ThresholdDetector>>(m, "ThresholdDetector")
        .def(py::init([](int max_intensity, int min_area, int vessel_blue_margin) {
                 return std::make_shared<ThresholdDetector>(
                     ThresholdDetectorOptions{max_intensity, min_area, vessel_blue_margin});
             }),
             py::arg("max_intensity") = 160, py::arg("min_area") = 16, py::arg("vessel_blue_margin") = 30);
    py::class_<OnnxDetector, Detector, std::shared_ptr<OnnxDetector>>(m, "OnnxDetector")
        .def(py::init([](const std::filesystem::path& model, int input_size) {
                 SessionConfig c;
                 c.model_path = model;
                 c.input_size = input_size;
                 return std::make_shared<OnnxDetector>(c);
             }),
             py::arg("model"), py::arg("input_size") = 1024);

    py::class_<Detection>(m, "Detection")
        .def_property_readonly("object_class", [](const Detection& d) { return std::string(class_name(d.object_class)); })
        .def_readonly("confidence", &Detection::confidence)
        .def_property_readonly("box", [](const Detection& d) { return box_tuple(d.box); })
        .def_property_readonly("origin", [](const Detection& d) { return py::make_tuple(d.mask.x, d.mask.y); })
        .def_property_readonly("local_mask", [](const Detection& d) { return from_mask(d.mask.local); })
        .def_property_readonly("area_px", [](const Detection& d) { return d.mask.count(); })
        .def("mask", [](const Detection& d, int width, int height) { return from_mask(d.mask.to_canvas(width, height)); },
             py::arg("width"), py::arg("height"), "Full-canvas mask.");

    py::class_<AnalysisResult, std::shared_ptr<AnalysisResult>>(m, "Analysis")
        .def_readonly("image_width", &AnalysisResult::image_width)
        .def_readonly("image_height", &AnalysisResult::image_height)
        .def_readonly("detections", &AnalysisResult::detections)
        .def_readonly("warnings", &AnalysisResult::warnings)
        .def_readonly("tiles", &AnalysisResult::tiles)
        .def_readonly("duplicates_removed", &AnalysisResult::duplicates_removed)
        .def_readonly("border_excluded", &AnalysisResult::border_excluded)
        .def_property_readonly("records",
                               [](const AnalysisResult& r) {
                                   py::list out;
                                   for (const auto& rec : r.records) out.append(record_dict(rec));
                                   return out;
                               })
        .def("csv", [](const AnalysisResult& r) { return measurements_csv(r); })
        .def("masks_zip",
             [](const AnalysisResult& r) {
                 const auto z = masks_zip(r);
                 return py::bytes(reinterpret_cast<const char*>(z.data()), z.size());
             })
        .def("to_json", [](const AnalysisResult& r) { return result_to_json(r); })
        .def_static("from_json", [](const std::string& s) { return std::make_shared<AnalysisResult>(result_from_json(s)); })
        .def("__len__", [](const AnalysisResult& r) { return r.detections.size(); });

    const auto run = [](const Detector& det, const ImageSource& src, double conf, double iou, int tile, int overlap,
                        double dedup_iou, int border_margin, double px_um, int workers) {
        const AnalysisParams p = make_params(conf, iou, tile, overlap, dedup_iou, border_margin, px_um, workers);
        py::gil_scoped_release release;
        return std::make_shared<AnalysisResult>(analyze(det, src, p));
    };
    m.def(
        "analyze",
        [run](const ImageArray& image, const Detector& detector, double conf, double iou, int tile, int overlap,
              double dedup_iou, int border_margin, double px_um, int workers) {
            const MemoryImageSource src(to_image(image));
            return run(detector, src, conf, iou, tile, overlap, dedup_iou, border_margin, px_um, workers);
        },
        py::arg("image"), py::arg("detector"), py::arg("conf") = kDefaultConfidence, py::arg("iou") = kDefaultNmsIou,
        py::arg("tile") = kDefaultTileSize, py::arg("overlap") = kDefaultTileOverlap,
        py::arg("dedup_iou") = kDefaultDedupIou, py::arg("border_margin") = 0, py::arg("px_um") = 0.65,
        py::arg("workers") = 0, "Tiled segmentation and morphometry of an H x W x 3 uint8 array.");
    m.def(
        "analyze_file",
        [run](const std::filesystem::path& path, const Detector& detector, double conf, double iou, int tile,
              int overlap, double dedup_iou, int border_margin, double px_um, int workers) {
            const auto src = open_image_source(path);
            return run(detector, *src, conf, iou, tile, overlap, dedup_iou, border_margin, px_um, workers);
        },
        py::arg("path"), py::arg("detector"), py::arg("conf") = kDefaultConfidence, py::arg("iou") = kDefaultNmsIou,
        py::arg("tile") = kDefaultTileSize, py::arg("overlap") = kDefaultTileOverlap,
        py::arg("dedup_iou") = kDefaultDedupIou, py::arg("border_margin") = 0, py::arg("px_um") = 0.65,
        py::arg("workers") = 0, "Like analyze, reading TIFFs window by window.");
    m.def(
        "render_overlay",
        [](const ImageArray& image, const AnalysisResult& r, double cutoff) {
            return from_image(render_overlay(to_image(image), r.detections, cutoff));
        },
        py::arg("image"), py::arg("analysis"), py::arg("cutoff") = 0.0);
    m.def(
        "read_image", [](const std::filesystem::path& p) { return from_image(read_image(p)); }, py::arg("path"));
}
