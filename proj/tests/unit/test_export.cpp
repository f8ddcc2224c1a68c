#include <algorithm>
#include <random>
#include <sstream>

#include "doctest.h"
#include "fiberscope/export.hpp"
#include "fiberscope/threshold_detector.hpp"
#include "support/synthetic_scene.hpp"

using namespace fiberscope;

namespace {

Detection rect_detection(ObjectClass cls, double conf, PixelRect r) {
    PlacedMask m{r.x0, r.y0, BinaryMask(r.width(), r.height())};
    for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) m.local.set(x, y);
    return Detection::from_mask(cls, conf, m);
}

AnalysisResult result_of(std::vector<Detection> dets, int w, int h) {
    AnalysisResult r;
    r.image_width = w;
    r.image_height = h;
    r.detections = std::move(dets);
    r.records = measure_all(r.detections, CalibrationConfig{});
    r.provenance.assign(r.detections.size(), {0});
    return r;
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

TEST_SUITE("export") {

TEST_CASE("CSV header only for no detections") {
    const auto r = result_of({}, 10, 10);
    CHECK(measurements_csv(r) == std::string(kCsvHeader) + "\n");
}

TEST_CASE("CSV rows, order, formatting and units") {
    std::vector<Detection> d{rect_detection(ObjectClass::Fiber, 0.5, {10, 10, 110, 14}),
                             rect_detection(ObjectClass::Vessel, 0.75, {20, 30, 50, 60}),
                             rect_detection(ObjectClass::Fiber, 0.5, {10, 40, 30, 44})};
    auto r = result_of(d, 200, 100);
    const auto csv = measurements_csv(r);
    const auto ls = lines(csv);
    REQUIRE(ls.size() == 4);
    CHECK(ls[0] == kCsvHeader);
    CHECK(split(ls[1])[0] == "2");  // highest confidence first
    CHECK(split(ls[2])[0] == "1");  // ties by object id
    CHECK(split(ls[3])[0] == "3");
    const auto row = split(ls[2]);
    REQUIRE(row.size() == 13);
    CHECK(row[1] == "fiber");
    CHECK(row[8] == "0.500000");
    CHECK(row[9] == "10.00");
    CHECK(row[12] == "14.00");
    for (int k = 2; k <= 7; ++k) CHECK(row[k].find('.') == row[k].size() - 4);
    CHECK(std::stod(row[2]) == doctest::Approx(r.records[0].length_um).epsilon(1e-3));
    CHECK(std::stod(row[7]) == 400.0);
    CHECK(std::stod(row[4]) == doctest::Approx(400 * 0.65 * 0.65).epsilon(1e-9));
    CHECK(measurements_csv(r) == csv);

    // 100 px at 0.65 um/px is 65.000 um.
    MorphometryRecord unit;
    unit.length_px = 100;
    apply_calibration(unit, CalibrationConfig{0.65});
    CHECK(unit.length_um == 65.0);
    r.records[0].length_px = 100;
    r.records[0].length_um = unit.length_um;
    CHECK(split(lines(measurements_csv(r))[2])[2] == "65.000");
    CHECK_THROWS_AS(measurements_csv(d, {}), InvalidArgument);
}

TEST_CASE("stored zip round trip and corruption") {
    std::mt19937_64 rng(109);
    std::vector<ZipEntry> e;
    for (int i = 0; i < 5; ++i) {
        ZipEntry z{"f" + std::to_string(i) + ".bin", {}};
        z.data.resize(rng() % 3000);
        for (auto& b : z.data) b = std::uint8_t(rng());
        e.push_back(z);
    }
    e.push_back({"empty.txt", {}});
    const auto bytes = write_zip(e);
    CHECK(write_zip(e) == bytes);
    const auto back = read_zip(bytes);
    REQUIRE(back.size() == e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        CHECK(back[i].name == e[i].name);
        CHECK(back[i].data == e[i].data);
    }
    auto bad = bytes;
    bad[40] ^= 0xFF;  // inside the first entry's data
    CHECK_THROWS_AS(read_zip(bad), ParseError);
    CHECK_THROWS_AS(read_zip(std::vector<std::uint8_t>(10, 0)), ParseError);
    CHECK(read_zip(write_zip({})).empty());
}

TEST_CASE("mask archive keeps overlaps and round-trips masks") {
    const auto a = rect_detection(ObjectClass::Fiber, 0.9, {10, 10, 60, 16});
    const auto b = rect_detection(ObjectClass::Fiber, 0.8, {30, 5, 36, 40});
    const auto r = result_of({a, b}, 80, 50);
    const auto entries = read_zip(masks_zip(r));
    REQUIRE(entries.size() == 3);
    CHECK(entries[0].name == "1_fiber.png");
    CHECK(entries[1].name == "2_fiber.png");
    CHECK(entries[2].name == "manifest.json");
    const BinaryMask ma = decode_mask_png(entries[0].data);
    const BinaryMask mb = decode_mask_png(entries[1].data);
    CHECK(ma.width() == 80);
    CHECK(ma.height() == 50);
    CHECK(ma == a.mask.to_canvas(80, 50));
    CHECK(mb == b.mask.to_canvas(80, 50));
    std::int64_t both = 0;
    for (int y = 0; y < 50; ++y)
        for (int x = 0; x < 80; ++x) both += ma.at(x, y) && mb.at(x, y);
    CHECK(both == 6 * 6);
    const std::string manifest(entries[2].data.begin(), entries[2].data.end());
    CHECK(manifest.find("\"full_canvas\": true") != std::string::npos);
    CHECK(masks_zip(r) == masks_zip(r));

    const auto none = read_zip(masks_zip(result_of({}, 5, 5)));
    REQUIRE(none.size() == 1);
    CHECK(none[0].name == "manifest.json");
}

TEST_CASE("overlay cutoff only filters what is drawn") {
    RgbImage img(60, 40, 225);
    std::vector<Detection> d{rect_detection(ObjectClass::Fiber, 0.3, {5, 5, 25, 12}),
                             rect_detection(ObjectClass::Vessel, 0.6, {20, 8, 40, 30}),
                             rect_detection(ObjectClass::Fiber, 0.9, {42, 2, 55, 35})};
    CHECK(render_overlay(img, d, 1.0) == img);
    const auto changed = [&](const RgbImage& o) {
        std::vector<char> c(60 * 40);
        for (int y = 0; y < 40; ++y)
            for (int x = 0; x < 60; ++x) c[y * 60 + x] = !std::equal(o.pixel(x, y), o.pixel(x, y) + 3, img.pixel(x, y));
        return c;
    };
    const auto all = changed(render_overlay(img, d, 0.0));
    for (const auto& det : d)
        for (int y = 0; y < 40; ++y)
            for (int x = 0; x < 60; ++x)
                if (det.mask.at(x, y)) CHECK(all[y * 60 + x]);
    std::vector<char> prev = all;
    for (double c : {0.3, 0.31, 0.6, 0.61, 0.9, 0.95}) {
        const auto now = changed(render_overlay(img, d, c));
        for (std::size_t i = 0; i < now.size(); ++i)
            if (now[i]) CHECK(prev[i]);
        prev = now;
    }
    // The cutoff is inclusive.
    const auto at = changed(render_overlay(img, d, 0.6));
    CHECK(at[20 * 60 + 30]);
}

TEST_CASE("result JSON is lossless") {
    const auto objs = fiberscope::testing::plant_objects(700, 500, 12, 100, 113);
    const fiberscope::testing::SceneSource scene(700, 500, objs);
    AnalysisParams p;
    p.tile_size = 256;
    p.overlap = 96;
    p.workers = 1;
    const auto r = analyze(ThresholdDetector{}, scene, p);
    REQUIRE(r.detections.size() == objs.size());
    const auto back = result_from_json(result_to_json(r));
    REQUIRE(back.detections.size() == r.detections.size());
    for (std::size_t i = 0; i < r.detections.size(); ++i) {
        CHECK(back.detections[i].mask == r.detections[i].mask);
        CHECK(back.detections[i].box == r.detections[i].box);
        CHECK(back.detections[i].confidence == r.detections[i].confidence);
        CHECK(back.records[i].length_um == r.records[i].length_um);
        CHECK(back.records[i].object_id == int(i) + 1);
        CHECK(back.provenance[i] == r.provenance[i]);
    }
    CHECK(measurements_csv(back) == measurements_csv(r));
    CHECK(masks_zip(back) == masks_zip(r));
    CHECK_THROWS_AS(result_from_json("{"), ParseError);
    CHECK_THROWS_AS(result_from_json("{\"image_width\": 1}"), ParseError);
}

TEST_CASE("analysis params") {
    AnalysisParams p;
    CHECK_NOTHROW(p.validate());
    p.inference.conf_threshold = 0.66;
    p.tile_size = 512;
    p.calibration.microns_per_pixel = 0.5;
    const auto q = params_from_json(params_to_json(p));
    CHECK(q.inference.conf_threshold == 0.66);
    CHECK(q.tile_size == 512);
    CHECK(q.calibration.microns_per_pixel == 0.5);
    CHECK(params_from_json("{\"conf\": 0.1}").inference.conf_threshold == 0.1);
    CHECK_THROWS_AS(params_from_json("[1]"), ParseError);
    CHECK_THROWS_AS(params_from_json("{\"tile\": \"big\"}"), ParseError);
    for (auto bad : {"{\"conf\": 1.5}", "{\"overlap\": 1024}", "{\"px_um\": 0}", "{\"mask_threshold\": 1}",
                     "{\"tile\": 8}", "{\"border_margin\": -1}"})
        CHECK_THROWS_AS(params_from_json(bad).validate(), InvalidArgument);
}

TEST_CASE("analysis of an image smaller than a tile") {
    const MemoryImageSource one(RgbImage(1, 1, 225));
    AnalysisParams p;
    const auto r = analyze(ThresholdDetector{}, one, p);
    CHECK(r.detections.empty());
    REQUIRE(!r.warnings.empty());
    CHECK(r.warnings[0].find("image smaller than tile") == 0);
}

TEST_CASE("tiny objects keep a row") {
    const auto tiny = rect_detection(ObjectClass::Fiber, 0.4, {3, 3, 5, 4});
    int fallbacks = 0;
    const auto recs = measure_all({tiny}, CalibrationConfig{}, 1, &fallbacks);
    CHECK(fallbacks == 1);
    CHECK(recs[0].length_px == 2);
    CHECK(recs[0].width_px == 1);
    CHECK(recs[0].area_px2 == 2);
}

}
