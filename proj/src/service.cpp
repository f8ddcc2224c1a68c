#include "fiberscope/service.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include "fiberscope/export.hpp"
#include "fiberscope/image_source.hpp"
#include "fiberscope/threshold_detector.hpp"
#include "json.hpp"

namespace fiberscope {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string now_iso() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, int(ms));
    return out;
}

std::string new_id() {
    static std::mutex mu;
    static std::mt19937_64 rng{std::random_device{}()};
    std::lock_guard lock(mu);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
    return buf;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot read " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    const std::string s = read_text(p);
    return {s.begin(), s.end()};
}

// Write to a sibling temp file then rename, so readers never see a partial file.
template <typename Bytes>
void write_atomic(const fs::path& p, const Bytes& data) {
    const fs::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
        if (!out) throw IoError("short write " + tmp.string());
    }
    fs::rename(tmp, p);
}

std::string upload_extension(std::span<const std::uint8_t> bytes, const std::string& filename) {
    if (bytes.size() >= 4 && ((bytes[0] == 'I' && bytes[1] == 'I' && (bytes[2] == 42 || bytes[2] == 43)) ||
                              (bytes[0] == 'M' && bytes[1] == 'M' && bytes[2] == 0)))
        return ".tif";
    std::string ext = fs::path(filename).extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    for (const char* ok : {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".jp2", ".pgm", ".ppm"})
        if (ext == ok) return ext;
    return ".img";
}

json info_json(const JobInfo& j) {
    return {{"id", j.id},
            {"state", to_string(j.state)},
            {"input_name", j.input_name},
            {"params", json::parse(params_to_json(j.params))},
            {"created", j.created},
            {"started", j.started},
            {"finished", j.finished},
            {"error", j.error},
            {"warnings", j.warnings},
            {"image_width", j.image_width},
            {"image_height", j.image_height}};
}

JobInfo info_from_json(const json& j) {
    JobInfo i;
    i.id = j.at("id");
    const auto st = parse_job_state(j.at("state").get<std::string>());
    if (!st) throw ParseError("bad job state");
    i.state = *st;
    i.input_name = j.at("input_name");
    i.params = params_from_json(j.at("params").dump());
    i.created = j.at("created");
    i.started = j.value("started", "");
    i.finished = j.value("finished", "");
    i.error = j.value("error", "");
    i.warnings = j.value("warnings", std::vector<std::string>{});
    i.image_width = j.value("image_width", 0);
    i.image_height = j.value("image_height", 0);
    return i;
}

}  // namespace

std::string to_string(JobState s) {
    switch (s) {
        case JobState::Queued: return "queued";
        case JobState::Running: return "running";
        case JobState::Done: return "done";
        case JobState::Failed: return "failed";
    }
    return "unknown";
}

std::optional<JobState> parse_job_state(std::string_view t) {
    for (JobState s : {JobState::Queued, JobState::Running, JobState::Done, JobState::Failed})
        if (t == to_string(s)) return s;
    return std::nullopt;
}

struct JobStore::Impl {
    struct Job {
        JobInfo info;
        fs::path dir;
        fs::path input;
        std::shared_ptr<const AnalysisResult> result;
    };

    fs::path root;
    std::shared_ptr<const Detector> detector;
    mutable std::mutex mu;
    mutable std::condition_variable queue_cv, state_cv;
    std::map<std::string, Job> jobs;
    std::vector<std::string> order;
    std::deque<std::string> queue;
    bool stopping = false;
    std::vector<std::thread> workers;

    fs::path jobs_dir() const { return root / "jobs"; }

    void persist(const Job& job) const { write_atomic(job.dir / "job.json", info_json(job.info).dump(2)); }

    const Job& find(const std::string& id) const {
        const auto it = jobs.find(id);
        if (it == jobs.end()) throw NotFoundError("no job " + id);
        return it->second;
    }

    const Job& find_done(const std::string& id) const {
        const Job& j = find(id);
        if (j.info.state != JobState::Done)
            throw ConflictError("job " + id + " is " + to_string(j.info.state) + ", not done");
        return j;
    }

    void recover() {
        if (!fs::exists(jobs_dir())) return;
        std::vector<Job> found;
        for (const auto& e : fs::directory_iterator(jobs_dir())) {
            const fs::path meta = e.path() / "job.json";
            if (!e.is_directory() || !fs::exists(meta)) continue;
            try {
                Job job;
                job.info = info_from_json(json::parse(read_text(meta)));
                job.dir = e.path();
                for (const auto& f : fs::directory_iterator(e.path()))
                    if (f.path().stem() == "input") job.input = f.path();
                if (job.info.state == JobState::Running) {
                    job.info.state = JobState::Failed;
                    job.info.error = "interrupted by service restart";
                    job.info.finished = now_iso();
                    persist(job);
                }
                found.push_back(std::move(job));
            } catch (const std::exception&) {
                // Unreadable job directories are left untouched.
            }
        }
        std::sort(found.begin(), found.end(), [](const Job& a, const Job& b) {
            return std::tie(a.info.created, a.info.id) < std::tie(b.info.created, b.info.id);
        });
        for (auto& j : found) {
            const std::string id = j.info.id;
            if (j.info.state == JobState::Queued) queue.push_back(id);
            order.push_back(id);
            jobs.emplace(id, std::move(j));
        }
    }

    void work() {
        for (;;) {
            std::string id;
            fs::path input, dir;
            AnalysisParams params;
            {
                std::unique_lock lock(mu);
                queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
                if (stopping) return;
                id = queue.front();
                queue.pop_front();
                Job& j = jobs.at(id);
                j.info.state = JobState::Running;
                j.info.started = now_iso();
                persist(j);
                input = j.input;
                dir = j.dir;
                params = j.info.params;
            }
            state_cv.notify_all();
            std::shared_ptr<AnalysisResult> result;
            std::string error;
            try {
                const auto source = open_image_source(input);
                result = std::make_shared<AnalysisResult>(analyze(*detector, *source, params));
                write_atomic(dir / "results.json", result_to_json(*result));
                write_atomic(dir / "results.csv", measurements_csv(*result));
                write_atomic(dir / "masks.zip", fiberscope::masks_zip(*result));
            } catch (const std::exception& e) {
                error = e.what();
            }
            {
                std::lock_guard lock(mu);
                Job& j = jobs.at(id);
                j.info.finished = now_iso();
                if (error.empty()) {
                    j.info.state = JobState::Done;
                    j.info.warnings = result->warnings;
                    j.info.image_width = result->image_width;
                    j.info.image_height = result->image_height;
                    j.result = result;
                } else {
                    j.info.state = JobState::Failed;
                    j.info.error = error;
                }
                persist(j);
            }
            state_cv.notify_all();
        }
    }
};

JobStore::JobStore(fs::path root, std::shared_ptr<const Detector> detector, int workers)
    : impl_(std::make_unique<Impl>()) {
    if (!detector) throw InvalidArgument("JobStore: detector is required");
    impl_->root = std::move(root);
    impl_->detector = std::move(detector);
    fs::create_directories(impl_->jobs_dir());
    impl_->recover();
    for (int i = 0; i < std::max(1, workers); ++i) impl_->workers.emplace_back([this] { impl_->work(); });
}

JobStore::~JobStore() {
    {
        std::lock_guard lock(impl_->mu);
        impl_->stopping = true;
    }
    impl_->queue_cv.notify_all();
    for (auto& t : impl_->workers) t.join();
}

std::string JobStore::submit(std::span<const std::uint8_t> image, const std::string& filename,
                             const AnalysisParams& params) {
    params.validate();
    if (image.empty()) throw InvalidArgument("empty upload");
    const std::string id = new_id();
    const fs::path staging = impl_->root / ("staging-" + id + upload_extension(image, filename));
    write_atomic(staging, image);
    int w = 0, h = 0;
    try {
        const auto src = open_image_source(staging);
        w = src->width();
        h = src->height();
    } catch (const std::exception& e) {
        fs::remove(staging);
        throw IoError(std::string("undecodable image: ") + e.what());
    }

    Impl::Job job;
    job.dir = impl_->jobs_dir() / id;
    fs::create_directories(job.dir);
    job.input = job.dir / ("input" + staging.extension().string());
    fs::rename(staging, job.input);
    write_atomic(job.dir / "params.json", params_to_json(params));
    job.info.id = id;
    job.info.input_name = fs::path(filename).filename().string();
    job.info.params = params;
    job.info.created = now_iso();
    job.info.image_width = w;
    job.info.image_height = h;
    {
        std::lock_guard lock(impl_->mu);
        impl_->persist(job);
        impl_->order.push_back(id);
        impl_->queue.push_back(id);
        impl_->jobs.emplace(id, std::move(job));
    }
    impl_->queue_cv.notify_one();
    return id;
}

std::optional<JobInfo> JobStore::get(const std::string& id) const {
    std::lock_guard lock(impl_->mu);
    const auto it = impl_->jobs.find(id);
    if (it == impl_->jobs.end()) return std::nullopt;
    return it->second.info;
}

std::vector<JobInfo> JobStore::list() const {
    std::lock_guard lock(impl_->mu);
    std::vector<JobInfo> out;
    for (const auto& id : impl_->order) out.push_back(impl_->jobs.at(id).info);
    return out;
}

std::shared_ptr<const AnalysisResult> JobStore::result(const std::string& id) const {
    fs::path dir;
    {
        std::lock_guard lock(impl_->mu);
        const auto& j = impl_->find_done(id);
        if (j.result) return j.result;
        dir = j.dir;
    }
    auto loaded = std::make_shared<const AnalysisResult>(result_from_json(read_text(dir / "results.json")));
    std::lock_guard lock(impl_->mu);
    auto& j = impl_->jobs.at(id);
    if (!j.result) j.result = loaded;
    return j.result;
}

std::string JobStore::csv(const std::string& id) const {
    fs::path dir;
    {
        std::lock_guard lock(impl_->mu);
        dir = impl_->find_done(id).dir;
    }
    return read_text(dir / "results.csv");
}

std::vector<std::uint8_t> JobStore::masks_zip(const std::string& id) const {
    fs::path dir;
    {
        std::lock_guard lock(impl_->mu);
        dir = impl_->find_done(id).dir;
    }
    return read_bytes(dir / "masks.zip");
}

std::vector<std::uint8_t> JobStore::overlay_png(const std::string& id, double cutoff) const {
    fs::path input;
    {
        std::lock_guard lock(impl_->mu);
        input = impl_->find_done(id).input;
    }
    const auto r = result(id);
    const auto src = open_image_source(input);
    return encode_png(render_overlay(src->read({0, 0, src->width(), src->height()}), r->detections, cutoff));
}

JobState JobStore::wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(impl_->mu);
    impl_->find(id);
    impl_->state_cv.wait_for(lock, timeout, [&] {
        const JobState s = impl_->jobs.at(id).info.state;
        return s == JobState::Done || s == JobState::Failed;
    });
    return impl_->jobs.at(id).info.state;
}

const fs::path& JobStore::root() const { return impl_->root; }

std::size_t JobStore::queued() const {
    std::lock_guard lock(impl_->mu);
    return impl_->queue.size();
}

ServiceConfig load_service_config(const std::optional<fs::path>& file) {
    ServiceConfig c;
    if (file) {
        try {
            const json j = json::parse(read_text(*file));
            if (j.contains("data_root")) c.data_root = j.at("data_root").get<std::string>();
            c.host = j.value("host", c.host);
            c.port = j.value("port", c.port);
            c.backend = j.value("backend", c.backend);
            if (j.contains("model")) c.model_path = j.at("model").get<std::string>();
            c.input_size = j.value("input_size", c.input_size);
            c.job_workers = j.value("job_workers", c.job_workers);
            if (j.contains("max_upload_mb")) c.max_upload_bytes = j.at("max_upload_mb").get<std::size_t>() << 20;
            if (j.contains("defaults")) c.defaults = params_from_json(j.at("defaults").dump(), c.defaults);
        } catch (const json::exception& e) {
            throw ParseError("config " + file->string() + ": " + e.what());
        }
    }
    const auto env = [](const char* name) -> std::optional<std::string> {
        const char* v = std::getenv(name);
        if (!v || !*v) return std::nullopt;
        return std::string(v);
    };
    const auto number = [](const std::string& name, const std::string& v) {
        std::size_t used = 0;
        double d = 0;
        try {
            d = std::stod(v, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != v.size()) throw InvalidArgument(name + " is not a number: " + v);
        return d;
    };
    if (auto v = env("FIBERSCOPE_DATA_ROOT")) c.data_root = *v;
    if (auto v = env("FIBERSCOPE_HOST")) c.host = *v;
    if (auto v = env("FIBERSCOPE_PORT")) c.port = int(number("FIBERSCOPE_PORT", *v));
    if (auto v = env("FIBERSCOPE_BACKEND")) c.backend = *v;
    if (auto v = env("FIBERSCOPE_MODEL")) c.model_path = *v;
    if (auto v = env("FIBERSCOPE_INPUT_SIZE")) c.input_size = int(number("FIBERSCOPE_INPUT_SIZE", *v));
    if (auto v = env("FIBERSCOPE_JOB_WORKERS")) c.job_workers = int(number("FIBERSCOPE_JOB_WORKERS", *v));
    if (auto v = env("FIBERSCOPE_WORKERS")) c.defaults.workers = int(number("FIBERSCOPE_WORKERS", *v));
    if (auto v = env("FIBERSCOPE_PX_UM")) c.defaults.calibration.microns_per_pixel = number("FIBERSCOPE_PX_UM", *v);
    if (auto v = env("FIBERSCOPE_CONF")) c.defaults.inference.conf_threshold = number("FIBERSCOPE_CONF", *v);
    if (auto v = env("FIBERSCOPE_IOU")) c.defaults.inference.iou_threshold = number("FIBERSCOPE_IOU", *v);
    if (c.backend != "onnx" && c.backend != "threshold")
        throw InvalidArgument("backend must be onnx or threshold, got " + c.backend);
    if (c.port < 0 || c.port > 65535) throw InvalidArgument("port out of range");
    if (c.job_workers < 1) throw InvalidArgument("job_workers must be >= 1");
    c.defaults.validate();
    return c;
}

std::shared_ptr<const Detector> make_detector(const ServiceConfig& c) {
    if (c.backend == "threshold") return std::make_shared<ThresholdDetector>();
    SessionConfig s;
    s.model_path = c.model_path.empty() ? model_path_from_env() : c.model_path;
    if (s.model_path.empty()) throw InvalidArgument("no model: set --model or FIBERSCOPE_MODEL");
    s.input_size = c.input_size;
    s.options = c.defaults.inference;
    return std::make_shared<OnnxDetector>(s);
}

std::string job_to_json(const JobInfo& job, const AnalysisResult* result) {
    json j = info_json(job);
    if (job.state != JobState::Failed) j.erase("error");
    if (result) {
        const auto s = result->summary();
        json summary;
        for (ObjectClass c : kAllClasses) {
            const auto& cs = s[class_index(c)];
            summary[std::string(class_name(c))] = {{"count", cs.count},
                                                   {"mean_length_um", cs.mean_length_um},
                                                   {"mean_width_um", cs.mean_width_um},
                                                   {"mean_area_um2", cs.mean_area_um2}};
        }
        summary["total"] = result->detections.size();
        summary["duplicates_removed"] = result->duplicates_removed;
        summary["border_excluded"] = result->border_excluded;
        summary["tiles"] = result->tiles;
        summary["inference_seconds"] = result->inference_seconds;
        summary["measure_seconds"] = result->measure_seconds;
        j["summary"] = summary;
        const std::string base = "/api/jobs/" + job.id;
        j["links"] = {{"csv", base + "/results.csv"}, {"masks", base + "/masks.zip"}, {"overlay", base + "/overlay.png"}};
        json dets = json::array();
        for (std::size_t i = 0; i < result->detections.size(); ++i) {
            const Detection& d = result->detections[i];
            const MorphometryRecord& r = result->records[i];
            json contour = json::array();
            for (const Point& p : simplify_outline(d.contour.vertices(), 1.0)) contour.push_back({p.x, p.y});
            dets.push_back({{"object_id", r.object_id},
                            {"class", std::string(class_name(d.object_class))},
                            {"confidence", d.confidence},
                            {"box", {d.box.x0, d.box.y0, d.box.x1, d.box.y1}},
                            {"length_um", r.length_um},
                            {"width_um", r.width_um},
                            {"area_um2", r.area_um2},
                            {"contour", contour}});
        }
        j["detections"] = dets;
    }
    return j.dump();
}

}  // namespace fiberscope
