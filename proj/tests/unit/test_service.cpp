#include <filesystem>
#include <fstream>
#include <future>

#include "doctest.h"
#include "fiberscope/export.hpp"
#include "fiberscope/service.hpp"
#include "fiberscope/threshold_detector.hpp"
#include "httplib.h"
#include "json.hpp"
#include "support/synthetic_scene.hpp"

using namespace fiberscope;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

fs::path fresh_root(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("fiberscope_svc_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

std::vector<std::uint8_t> scene_png(int w, int h, int count, std::uint64_t seed) {
    const auto objs = fiberscope::testing::plant_objects(w, h, count, 90, seed);
    const fiberscope::testing::SceneSource scene(w, h, objs);
    return encode_png(scene.read({0, 0, w, h}));
}

AnalysisParams small_tiles() {
    AnalysisParams p;
    p.tile_size = 256;
    p.overlap = 128;
    p.workers = 1;
    return p;
}

std::size_t count_lines(const std::string& s) { return std::size_t(std::count(s.begin(), s.end(), '\n')); }

std::size_t job_dirs(const fs::path& root) {
    std::size_t n = 0;
    if (fs::exists(root / "jobs"))
        for ([[maybe_unused]] const auto& e : fs::directory_iterator(root / "jobs")) ++n;
    return n;
}

// Holds every detect() call until released.
class GateDetector : public Detector {
public:
    std::vector<Detection> detect(const RgbImage&) const override {
        gate_.wait();
        return {};
    }
    std::string name() const override { return "gate"; }
    void open() { promise_.set_value(); }

private:
    std::promise<void> promise_;
    std::shared_future<void> gate_{promise_.get_future().share()};
};

}  // namespace

TEST_SUITE("service") {

TEST_CASE("job lifecycle and exports") {
    const auto root = fresh_root("lifecycle");
    JobStore store(root, std::make_shared<ThresholdDetector>());
    const auto png = scene_png(500, 400, 10, 127);
    const std::string id = store.submit(png, "slide.png", small_tiles());
    const auto first = store.get(id);
    REQUIRE(first);
    CHECK((first->state == JobState::Queued || first->state == JobState::Running || first->state == JobState::Done));
    CHECK(first->input_name == "slide.png");
    CHECK(store.wait(id, 60s) == JobState::Done);

    const auto r = store.result(id);
    CHECK(r->detections.size() == 10);
    const std::string csv = store.csv(id);
    CHECK(count_lines(csv) == r->detections.size() + 1);
    CHECK(csv == measurements_csv(*r));
    const auto zip = read_zip(store.masks_zip(id));
    CHECK(zip.size() == r->detections.size() + 1);
    for (std::size_t i = 0; i < r->detections.size(); ++i) {
        const auto& e = zip[i];
        CHECK(e.name == std::to_string(i + 1) + "_" + std::string(class_name(r->detections[i].object_class)) + ".png");
        CHECK(decode_mask_png(e.data) == r->detections[i].mask.to_canvas(500, 400));
    }
    const RgbImage overlay = decode_image(store.overlay_png(id, 0.0));
    CHECK(overlay.width() == 500);
    CHECK(decode_image(store.overlay_png(id, 1.0)) == decode_image(png));

    CHECK(store.csv(id) == csv);
    CHECK(store.masks_zip(id) == store.masks_zip(id));
    CHECK(fs::exists(root / "jobs" / id / "params.json"));
    CHECK(fs::exists(root / "jobs" / id / "results.json"));
    CHECK(store.list().size() == 1);
    fs::remove_all(root);
}

TEST_CASE("submissions are validated before anything is stored") {
    const auto root = fresh_root("reject");
    JobStore store(root, std::make_shared<ThresholdDetector>());
    CHECK_THROWS_AS(store.submit({}, "empty.png", AnalysisParams{}), InvalidArgument);
    const std::vector<std::uint8_t> text{'h', 'e', 'l', 'l', 'o'};
    CHECK_THROWS_AS(store.submit(text, "notes.txt", AnalysisParams{}), IoError);
    AnalysisParams bad;
    bad.inference.conf_threshold = 2;
    CHECK_THROWS_AS(store.submit(scene_png(64, 64, 1, 1), "a.png", bad), InvalidArgument);
    CHECK(job_dirs(root) == 0);
    CHECK(store.list().empty());
    for (const auto& e : fs::directory_iterator(root)) CHECK(e.path().filename() == "jobs");
    fs::remove_all(root);
}

TEST_CASE("1 px image finishes with a warning; grayscale is accepted") {
    const auto root = fresh_root("tiny");
    JobStore store(root, std::make_shared<ThresholdDetector>());
    const std::string id = store.submit(encode_png(RgbImage(1, 1, 200)), "dot.png", AnalysisParams{});
    REQUIRE(store.wait(id, 30s) == JobState::Done);
    CHECK(store.result(id)->detections.empty());
    const auto info = store.get(id);
    REQUIRE(!info->warnings.empty());
    CHECK(info->warnings[0].find("image smaller than tile") == 0);
    CHECK(store.csv(id) == std::string(kCsvHeader) + "\n");

    BinaryMask gray(40, 40);
    const std::string g = store.submit(encode_png(gray), "gray.png", AnalysisParams{});
    CHECK(store.wait(g, 30s) == JobState::Done);
    fs::remove_all(root);
}

TEST_CASE("unknown and unfinished jobs") {
    const auto root = fresh_root("conflict");
    auto gate = std::make_shared<GateDetector>();
    JobStore store(root, gate);
    CHECK(!store.get("nope"));
    CHECK_THROWS_AS(store.csv("nope"), NotFoundError);
    CHECK_THROWS_AS(store.wait("nope", 1ms), NotFoundError);
    const std::string id = store.submit(scene_png(64, 64, 1, 3), "a.png", small_tiles());
    CHECK_THROWS_AS(store.csv(id), ConflictError);
    CHECK_THROWS_AS(store.masks_zip(id), ConflictError);
    CHECK_THROWS_AS(store.overlay_png(id, 0.5), ConflictError);
    CHECK(store.wait(id, 20ms) != JobState::Done);
    gate->open();
    CHECK(store.wait(id, 30s) == JobState::Done);
    CHECK(count_lines(store.csv(id)) == 1);
    fs::remove_all(root);
}

TEST_CASE("jobs survive a restart") {
    const auto root = fresh_root("restart");
    std::string done_id, csv;
    std::vector<std::uint8_t> zip, overlay;
    {
        JobStore store(root, std::make_shared<ThresholdDetector>());
        done_id = store.submit(scene_png(400, 300, 6, 131), "s.png", small_tiles());
        REQUIRE(store.wait(done_id, 60s) == JobState::Done);
        csv = store.csv(done_id);
        zip = store.masks_zip(done_id);
        overlay = store.overlay_png(done_id, 0.2);
    }
    // Fake a job that was running and one still queued when the process died.
    const auto clone = [&](const std::string& id, const std::string& state) {
        fs::copy(root / "jobs" / done_id, root / "jobs" / id, fs::copy_options::recursive);
        for (const char* f : {"results.json", "results.csv", "masks.zip"}) fs::remove(root / "jobs" / id / f);
        std::ifstream in(root / "jobs" / id / "job.json");
        auto j = nlohmann::json::parse(in);
        j["id"] = id;
        j["state"] = state;
        std::ofstream(root / "jobs" / id / "job.json") << j.dump();
    };
    clone("deadbeef00000001", "running");
    clone("deadbeef00000002", "queued");

    JobStore again(root, std::make_shared<ThresholdDetector>());
    CHECK(again.get(done_id)->state == JobState::Done);
    CHECK(again.csv(done_id) == csv);
    CHECK(again.masks_zip(done_id) == zip);
    CHECK(again.overlay_png(done_id, 0.2) == overlay);
    const auto crashed = again.get("deadbeef00000001");
    CHECK(crashed->state == JobState::Failed);
    CHECK(!crashed->error.empty());
    CHECK(again.wait("deadbeef00000002", 60s) == JobState::Done);
    CHECK(again.csv("deadbeef00000002") == csv);
    CHECK(again.list().size() == 3);
    fs::remove_all(root);
}

TEST_CASE("HTTP contract") {
    const auto root = fresh_root("http");
    JobStore store(root, std::make_shared<ThresholdDetector>());
    HttpService http(store, small_tiles());
    const int port = http.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(30, 0);

    const auto png = scene_png(320, 240, 5, 137);
    httplib::MultipartFormDataItems items{{"image", std::string(png.begin(), png.end()), "scene.png", "image/png"},
                                          {"conf", "0.1", "", ""},
                                          {"px_um", "0.5", "", ""}};
    auto res = cli.Post("/api/jobs", items);
    REQUIRE(res);
    CHECK(res->status == 202);
    const std::string id = nlohmann::json::parse(res->body).at("id");
    REQUIRE(store.wait(id, 60s) == JobState::Done);
    CHECK(store.get(id)->params.calibration.microns_per_pixel == 0.5);

    res = cli.Get("/api/jobs/" + id);
    REQUIRE(res);
    CHECK(res->status == 200);
    const auto job = nlohmann::json::parse(res->body);
    CHECK(job.at("state") == "done");
    CHECK(job.at("summary").at("total") == 5);
    CHECK(job.at("detections").size() == 5);
    CHECK(job.at("links").at("csv") == "/api/jobs/" + id + "/results.csv");

    res = cli.Get("/api/jobs/" + id + "/results.csv");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == store.csv(id));
    CHECK(count_lines(res->body) == 6);

    res = cli.Get("/api/jobs/" + id + "/masks.zip");
    REQUIRE(res);
    CHECK(read_zip(std::vector<std::uint8_t>(res->body.begin(), res->body.end())).size() == 6);

    res = cli.Get("/api/jobs/" + id + "/overlay.png?conf=0.66");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->get_header_value("Content-Type") == "image/png");
    res = cli.Get("/api/jobs/" + id + "/overlay.png?conf=abc");
    CHECK(res->status == 400);

    res = cli.Get("/api/jobs");
    REQUIRE(res);
    CHECK(nlohmann::json::parse(res->body).at("jobs").size() == 1);

    res = cli.Get("/api/jobs/ffffffffffffffff");
    REQUIRE(res);
    CHECK(res->status == 404);
    CHECK(nlohmann::json::parse(res->body).at("code") == "not_found");

    httplib::MultipartFormDataItems empty{{"image", "", "empty.png", "image/png"}};
    res = cli.Post("/api/jobs", empty);
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(nlohmann::json::parse(res->body).at("code") == "empty_upload");

    httplib::MultipartFormDataItems junk{{"image", "not an image", "notes.txt", "text/plain"}};
    res = cli.Post("/api/jobs", junk);
    REQUIRE(res);
    CHECK(res->status == 422);
    CHECK(nlohmann::json::parse(res->body).at("code") == "invalid_image");

    httplib::MultipartFormDataItems badparam{{"image", std::string(png.begin(), png.end()), "a.png", "image/png"},
                                             {"overlap", "9999", "", ""}};
    res = cli.Post("/api/jobs", badparam);
    REQUIRE(res);
    CHECK(res->status == 400);
    CHECK(store.list().size() == 1);
    http.stop();
    fs::remove_all(root);
}

TEST_CASE("HTTP reports unfinished jobs as conflicts") {
    const auto root = fresh_root("http409");
    auto gate = std::make_shared<GateDetector>();
    JobStore store(root, gate);
    HttpService http(store, small_tiles());
    const int port = http.start("127.0.0.1", 0);
    httplib::Client cli("127.0.0.1", port);
    const auto png = scene_png(64, 64, 1, 5);
    auto res = cli.Post("/api/jobs", httplib::MultipartFormDataItems{{"image", std::string(png.begin(), png.end()), "a.png", "image/png"}});
    REQUIRE(res);
    const std::string id = nlohmann::json::parse(res->body).at("id");
    res = cli.Get("/api/jobs/" + id + "/results.csv");
    REQUIRE(res);
    CHECK(res->status == 409);
    const auto st = nlohmann::json::parse(cli.Get("/api/jobs/" + id)->body).at("state").get<std::string>();
    CHECK((st == "queued" || st == "running"));
    gate->open();
    CHECK(store.wait(id, 30s) == JobState::Done);
    http.stop();
    fs::remove_all(root);
}

TEST_CASE("service config from file and environment") {
    const auto root = fresh_root("config");
    fs::create_directories(root);
    const auto file = root / "cfg.json";
    std::ofstream(file) << R"({"backend": "threshold", "port": 9000, "defaults": {"conf": 0.4, "tile": 512}})";
    auto c = load_service_config(file);
    CHECK(c.backend == "threshold");
    CHECK(c.port == 9000);
    CHECK(c.defaults.inference.conf_threshold == 0.4);
    CHECK(c.defaults.tile_size == 512);
    ::setenv("FIBERSCOPE_PORT", "9100", 1);
    ::setenv("FIBERSCOPE_PX_UM", "0.325", 1);
    c = load_service_config(file);
    CHECK(c.port == 9100);
    CHECK(c.defaults.calibration.microns_per_pixel == 0.325);
    ::setenv("FIBERSCOPE_PORT", "ninety", 1);
    CHECK_THROWS_AS(load_service_config(file), InvalidArgument);
    ::unsetenv("FIBERSCOPE_PORT");
    ::unsetenv("FIBERSCOPE_PX_UM");
    CHECK(make_detector(c)->name() == "threshold");
    std::ofstream(file) << "{ nope";
    CHECK_THROWS_AS(load_service_config(file), ParseError);
    CHECK(load_service_config(std::nullopt).backend == "onnx");
    fs::remove_all(root);
}

}
