#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "fiberscope/batch.hpp"
#include "fiberscope/export.hpp"
#include "fiberscope/image_source.hpp"
#include "fiberscope/service.hpp"
#include "fiberscope/threshold_detector.hpp"

using namespace fiberscope;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(f), {}};
}

void write_file(const fs::path& path, std::string_view data) {
    std::ofstream f(path, std::ios::binary);
    f.write(data.data(), std::streamsize(data.size()));
    if (!f) throw IoError("cannot write " + path.string());
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& data) {
    write_file(path, std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
}

std::string fixed(double v, int decimals) {
    std::ostringstream o;
    o.setf(std::ios::fixed);
    o.precision(decimals);
    o << v;
    return o.str();
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
    fs::path image;
    fs::path model;
    std::string backend = "onnx";
    int input_size = 1024;
    std::string preset;
    fs::path out;
    bool no_overlay = false;
    AnalysisParams params;
};

int run_analyze(AnalyzeArgs& a) {
    if (!a.preset.empty()) {
        const auto c = confidence_preset(a.preset);
        if (!c) throw InvalidArgument("unknown preset " + a.preset);
        a.params.inference.conf_threshold = *c;
    }
    a.params.validate();
    ServiceConfig sc;
    sc.backend = a.backend;
    sc.model_path = a.model.empty() ? model_path_from_env() : a.model;
    sc.input_size = a.input_size;
    sc.defaults = a.params;
    const auto detector = make_detector(sc);
    const auto source = open_image_source(a.image);

    std::cerr << "analyzing " << a.image.string() << " (" << source->width() << " x " << source->height()
              << ") with " << detector->name() << "\n";
    const AnalysisResult r = analyze(*detector, *source, a.params);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";

    const fs::path out = a.out.empty() ? fs::path(a.image.stem().string() + "_fiberscope") : a.out;
    fs::create_directories(out);
    write_file(out / "results.csv", measurements_csv(r));
    write_file(out / "results.json", result_to_json(r));
    write_file(out / "masks.zip", masks_zip(r));
    const std::int64_t pixels = std::int64_t(r.image_width) * r.image_height;
    if (!a.no_overlay && pixels <= kFullCanvasMaskLimit) {
        const RgbImage img = source->read({0, 0, r.image_width, r.image_height});
        write_file(out / "overlay.png", encode_png(render_overlay(img, r.detections, a.params.inference.conf_threshold)));
    } else if (!a.no_overlay) {
        std::cerr << "note: image too large for a full overlay; skipped\n";
    }

    const auto s = r.summary();
    std::cout << "tiles " << r.tiles << ", inference " << fixed(r.inference_seconds, 2) << " s, morphometry "
              << fixed(r.measure_seconds, 2) << " s\n";
    std::cout << "duplicates removed " << r.duplicates_removed << ", border excluded " << r.border_excluded
              << ", fragments joined " << r.fragments_joined << "\n";
    for (ObjectClass c : kAllClasses) {
        const auto& cs = s[class_index(c)];
        std::cout << class_name(c) << ": " << cs.count;
        if (cs.count)
            std::cout << ", mean length " << fixed(cs.mean_length_um, 3) << " um, width " << fixed(cs.mean_width_um, 3)
                      << " um, area " << fixed(cs.mean_area_um2, 3) << " um2";
        std::cout << "\n";
    }
    std::cout << "wrote " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    fs::path pred;
    fs::path truth;
    std::string mode = "mask";
    std::string format = "table";
    fs::path report;
    fs::path curves;
};

int run_eval(const EvalArgs& a) {
    std::map<std::string, AnalysisResult> preds;
    for (const auto& e : fs::directory_iterator(a.pred)) {
        if (e.path().extension() != ".json") continue;
        preds.emplace(e.path().stem().string(), result_from_json(read_file(e.path())));
    }
    if (preds.empty()) throw InvalidArgument("no prediction .json files in " + a.pred.string());

    const ImageSizeLookup sizes = [&](const std::string& name) -> std::optional<std::pair<int, int>> {
        const auto it = preds.find(fs::path(name).stem().string());
        if (it == preds.end()) return std::nullopt;
        return std::pair{it->second.image_width, it->second.image_height};
    };
    const auto truth = parse_via_annotations(read_file(a.truth), sizes);

    std::vector<EvalImage> images;
    std::set<std::string> used;
    for (const auto& t : truth.images) {
        const std::string stem = fs::path(t.image_path).stem().string();
        EvalImage e;
        e.truths = ground_truth_of(t);
        const auto it = preds.find(stem);
        if (it == preds.end()) {
            std::cerr << "warning: no predictions for " << t.image_path << "; its objects count as missed\n";
        } else {
            e.predictions = it->second.detections;
            used.insert(stem);
        }
        images.push_back(std::move(e));
    }
    for (const auto& [stem, r] : preds)
        if (!used.count(stem)) std::cerr << "warning: " << stem << ".json has no annotations; skipped\n";

    const MatchMode mode = a.mode == "box" ? MatchMode::Box : MatchMode::Mask;
    const EvaluationReport rep = evaluate(images, mode);
    const std::string json = evaluation_to_json(rep);
    std::cout << (a.format == "json" ? json : evaluation_table(rep));
    if (!a.report.empty()) write_file(a.report, json);
    if (!a.curves.empty()) {
        fs::create_directories(a.curves);
        write_file(a.curves / "pr_curve.tsv", pr_curve_table(rep));
        write_file(a.curves / "f1_curve.tsv", f1_curve_table(rep));
    }
    return 0;
}

// ---------------------------------------------------------------------------
// compare

struct CompareArgs {
    std::vector<std::string> groups;
    std::string metric = "length_um";
    std::string object_class;
    bool welch = false;
    std::string format = "table";
};

int run_compare(const CompareArgs& a) {
    std::optional<ObjectClass> only;
    if (!a.object_class.empty()) {
        only = parse_class(a.object_class);
        if (!only) throw InvalidArgument("unknown class " + a.object_class);
    }
    std::vector<SampleGroup> groups;
    for (const auto& g : a.groups) {
        const auto eq = g.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == g.size())
            throw InvalidArgument("--group expects LABEL=CSV, got " + g);
        const fs::path path = g.substr(eq + 1);
        groups.emplace_back(g.substr(0, eq), read_csv_column(read_file(path), a.metric, only));
    }
    const auto rep = group_report(groups, a.metric, a.welch ? TTestVariant::Welch : TTestVariant::Pooled);
    std::cout << (a.format == "json" ? group_report_to_json(rep) : group_report_table(rep));
    return 0;
}

// ---------------------------------------------------------------------------
// dataset prepare

struct PrepareArgs {
    fs::path annotations;
    fs::path images;
    fs::path out;
    bool flip_h = false;
    bool flip_v = false;
    bool rot90 = false;
    std::vector<double> scales;
    PrepareOptions options;
};

int run_prepare(PrepareArgs& a) {
    a.options.augment.horizontal_flip = a.flip_h;
    a.options.augment.vertical_flip = a.flip_v;
    a.options.augment.rotations = a.rot90 ? std::vector<int>{90} : std::vector<int>{};
    a.options.augment.scale_factors = a.scales;
    const auto s = prepare_dataset(read_file(a.annotations), a.images, a.out, a.options);
    std::cout << "source images " << s.source_images << ", train tiles " << s.labels.train_images << ", val tiles "
              << s.labels.val_images << ", fibers " << s.labels.fibers << ", vessels " << s.labels.vessels << "\n";
    if (s.dropped_regions) std::cerr << "note: dropped " << s.dropped_regions << " degenerate regions\n";
    if (s.skipped_shapes) std::cerr << "note: skipped " << s.skipped_shapes << " non-polygon regions\n";
    std::cout << "wrote " << (a.out / "data.yaml").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// serve

struct ServeArgs {
    std::optional<fs::path> config;
    std::optional<fs::path> data_root;
    std::optional<std::string> host;
    std::optional<int> port;
    std::optional<std::string> backend;
    std::optional<fs::path> model;
    std::optional<int> job_workers;
};

HttpService* g_server = nullptr;

extern "C" void on_signal(int) {
    if (g_server) g_server->stop();
}

int run_serve(const ServeArgs& a) {
    ServiceConfig c = load_service_config(a.config);
    if (a.data_root) c.data_root = *a.data_root;
    if (a.host) c.host = *a.host;
    if (a.port) c.port = *a.port;
    if (a.backend) c.backend = *a.backend;
    if (a.model) c.model_path = *a.model;
    if (a.job_workers) c.job_workers = *a.job_workers;

    JobStore store(c.data_root, make_detector(c), c.job_workers);
    HttpService http(store, c.defaults, c.max_upload_bytes);
    g_server = &http;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "serving on http://" << c.host << ":" << c.port << " (data root " << c.data_root.string() << ", "
              << store.queued() << " queued)\n";
    http.run(c.host, c.port);
    g_server = nullptr;
    return 0;
}

void add_param_flags(CLI::App* cmd, AnalysisParams& p) {
    cmd->add_option("--tile", p.tile_size, "Tile edge in pixels")->capture_default_str();
    cmd->add_option("--overlap", p.overlap, "Tile overlap in pixels")->capture_default_str();
    cmd->add_option("--conf", p.inference.conf_threshold, "Confidence threshold")->capture_default_str();
    cmd->add_option("--nms", p.inference.iou_threshold, "NMS IoU threshold")->capture_default_str();
    cmd->add_option("--mask-threshold", p.inference.mask.threshold, "Mask probability threshold")
        ->capture_default_str();
    cmd->add_option("--dedup-iou", p.dedup_iou, "Cross-tile duplicate IoU")->capture_default_str();
    cmd->add_option("--border-margin", p.border_margin, "Drop objects within this many px of the image edge")
        ->capture_default_str();
    cmd->add_option("--px-um", p.calibration.microns_per_pixel, "Microns per pixel")->capture_default_str();
    cmd->add_option("--workers", p.workers, "Worker threads (0 = all cores)")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Segmentation and morphometry of wood fibers and vessels"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "fiberscope 0.1.0");

    AnalyzeArgs analyze_args;
    auto* analyze_cmd = app.add_subcommand("analyze", "Segment one image and measure every object");
    analyze_cmd->add_option("--image", analyze_args.image, "Input image (TIFF read in windows; others decoded)")
        ->required()
        ->check(CLI::ExistingFile);
    analyze_cmd->add_option("--model", analyze_args.model, "ONNX model (default: $FIBERSCOPE_MODEL)");
    analyze_cmd->add_option("--backend", analyze_args.backend, "onnx or threshold")
        ->check(CLI::IsMember({"onnx", "threshold"}))
        ->capture_default_str();
    analyze_cmd->add_option("--input-size", analyze_args.input_size, "Model input size")->capture_default_str();
    analyze_cmd->add_option("--preset", analyze_args.preset, "Confidence preset (overrides --conf)");
    analyze_cmd->add_option("--out", analyze_args.out, "Output directory (default: <stem>_fiberscope)");
    analyze_cmd->add_flag("--no-overlay", analyze_args.no_overlay, "Skip overlay.png");
    add_param_flags(analyze_cmd, analyze_args.params);

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Score predictions against VIA annotations");
    eval_cmd->add_option("--pred", eval_args.pred, "Directory of results.json files named <image stem>.json")
        ->required()
        ->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--truth", eval_args.truth, "VIA annotation export")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--mode", eval_args.mode, "mask or box")
        ->check(CLI::IsMember({"mask", "box"}))
        ->capture_default_str();
    eval_cmd->add_option("--format", eval_args.format, "table or json")
        ->check(CLI::IsMember({"table", "json"}))
        ->capture_default_str();
    eval_cmd->add_option("--report", eval_args.report, "Also write the JSON report here");
    eval_cmd->add_option("--curves", eval_args.curves, "Write pr_curve.tsv and f1_curve.tsv here");

    CompareArgs compare_args;
    auto* compare_cmd = app.add_subcommand("compare", "Compare a measurement between groups");
    compare_cmd->add_option("--group", compare_args.groups, "LABEL=results.csv (at least two)")->required();
    compare_cmd->add_option("--metric", compare_args.metric, "CSV column")->capture_default_str();
    compare_cmd->add_option("--class", compare_args.object_class, "Only rows of this class");
    compare_cmd->add_flag("--welch", compare_args.welch, "Welch t-test instead of pooled");
    compare_cmd->add_option("--format", compare_args.format, "table or json")
        ->check(CLI::IsMember({"table", "json"}))
        ->capture_default_str();

    PrepareArgs prepare_args;
    auto* dataset_cmd = app.add_subcommand("dataset", "Training data tools");
    dataset_cmd->require_subcommand(1);
    auto* prepare_cmd = dataset_cmd->add_subcommand("prepare", "Tile, split and augment a VIA-annotated set");
    prepare_cmd->add_option("--annotations", prepare_args.annotations, "VIA export")
        ->required()
        ->check(CLI::ExistingFile);
    prepare_cmd->add_option("--images", prepare_args.images, "Directory of the annotated images")
        ->required()
        ->check(CLI::ExistingDirectory);
    prepare_cmd->add_option("--out", prepare_args.out, "Output dataset directory")->required();
    prepare_cmd->add_option("--tile", prepare_args.options.tile, "Training tile size")->capture_default_str();
    prepare_cmd->add_option("--train-frac", prepare_args.options.train_fraction, "Training fraction")
        ->capture_default_str();
    prepare_cmd->add_option("--seed", prepare_args.options.seed, "Split seed")->capture_default_str();
    prepare_cmd->add_option("--min-area-frac", prepare_args.options.min_area_fraction,
                            "Keep clipped objects with at least this area fraction")
        ->capture_default_str();
    prepare_cmd->add_flag("--flip-h", prepare_args.flip_h, "Add horizontal flips");
    prepare_cmd->add_flag("--flip-v", prepare_args.flip_v, "Add vertical flips");
    prepare_cmd->add_flag("--rot90", prepare_args.rot90, "Add 90 degree rotations");
    prepare_cmd->add_option("--scale", prepare_args.scales, "Add rescaled copies (each in (0.25, 4))");

    ServeArgs serve_args;
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP job service");
    serve_cmd->add_option("--config", serve_args.config, "JSON config file")->check(CLI::ExistingFile);
    serve_cmd->add_option("--data-root", serve_args.data_root, "Job storage directory");
    serve_cmd->add_option("--host", serve_args.host, "Bind address");
    serve_cmd->add_option("--port", serve_args.port, "Port");
    serve_cmd->add_option("--backend", serve_args.backend, "onnx or threshold")
        ->check(CLI::IsMember({"onnx", "threshold"}));
    serve_cmd->add_option("--model", serve_args.model, "ONNX model");
    serve_cmd->add_option("--job-workers", serve_args.job_workers, "Concurrent jobs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (analyze_cmd->parsed()) return run_analyze(analyze_args);
        if (eval_cmd->parsed()) return run_eval(eval_args);
        if (compare_cmd->parsed()) {
            if (compare_args.groups.size() < 2) throw InvalidArgument("compare needs at least two --group");
            return run_compare(compare_args);
        }
        if (prepare_cmd->parsed()) return run_prepare(prepare_args);
        if (serve_cmd->parsed()) return run_serve(serve_args);
    } catch (const std::exception& e) {
        std::cerr << "fiberscope: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
