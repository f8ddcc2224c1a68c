#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "fiberscope/batch.hpp"
#include "fiberscope/export.hpp"
#include "fiberscope/image_source.hpp"
#include "json.hpp"

using namespace fiberscope;
namespace fs = std::filesystem;

namespace {

RgbImage noise(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    RgbImage img(w, h);
    for (auto& b : img.data()) b = std::uint8_t(rng());
    return img;
}

Polygon rect_polygon(double x0, double y0, double x1, double y1) {
    return Polygon({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
}

std::string read_text(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_SUITE("batch") {

TEST_CASE("transform_image agrees with transform_point on pixel centers") {
    const RgbImage src = noise(7, 5, 41);
    for (int flips = 0; flips < 4; ++flips)
        for (int q = 0; q < 4; ++q) {
            ImageTransform t;
            t.flip_h = flips & 1;
            t.flip_v = flips & 2;
            t.quarter_turns = q;
            const RgbImage out = transform_image(src, t);
            const auto [w, h] = transformed_size(t, 7, 5);
            REQUIRE(out.width() == w);
            REQUIRE(out.height() == h);
            for (int y = 0; y < 5; ++y)
                for (int x = 0; x < 7; ++x) {
                    const Point p = transform_point(t, {x + 0.5, y + 0.5}, 7, 5);
                    const int u = int(std::floor(p.x)), v = int(std::floor(p.y));
                    CHECK(std::equal(src.pixel(x, y), src.pixel(x, y) + 3, out.pixel(u, v)));
                }
        }
    CHECK(transform_image(src, ImageTransform{}) == src);

    ImageTransform s;
    s.scale = 2.0;
    const RgbImage flat = transform_image(RgbImage(10, 6, 90), s);
    CHECK(flat.width() == 20);
    CHECK(flat.height() == 12);
    for (int y = 1; y < 11; ++y)
        for (int x = 1; x < 19; ++x) CHECK(flat.pixel(x, y)[0] == 90);
}

TEST_CASE("ground truth rasterization") {
    AnnotatedImage img;
    img.width = 50;
    img.height = 40;
    img.objects = {{ObjectClass::Fiber, rect_polygon(2, 3, 12, 7)},
                   {ObjectClass::Vessel, rect_polygon(45, 30, 60, 50)},
                   {ObjectClass::Fiber, rect_polygon(55, 45, 60, 50)}};
    const auto gt = ground_truth_of(img);
    REQUIRE(gt.size() == 2);
    CHECK(gt[0].mask.local.count() == 40);
    CHECK(gt[1].object_class == ObjectClass::Vessel);
    CHECK(gt[1].mask.local.count() == 50);
}

TEST_CASE("CSV column reader") {
    const std::string csv = std::string(kCsvHeader) +
                            "\n2,vessel,10.000,5.000,3.000,1,1,1,0.9,0,0,1,1\n"
                            "1,fiber,20.500,4.000,3.000,1,1,1,0.8,0,0,1,1\n"
                            "3,fiber,30.250,4.000,3.000,1,1,1,0.7,0,0,1,1\n";
    CHECK(read_csv_column(csv, "length_um") == std::vector<double>{10.0, 20.5, 30.25});
    CHECK(read_csv_column(csv, "length_um", ObjectClass::Fiber) == std::vector<double>{20.5, 30.25});
    CHECK(read_csv_column(std::string(kCsvHeader) + "\n", "width_um").empty());
    CHECK(read_csv_column("# comment\r\nlength_um\r\n1.5\r\n", "length_um") == std::vector<double>{1.5});
    CHECK_THROWS_AS(read_csv_column(csv, "girth_um"), ParseError);
    CHECK_THROWS_AS(read_csv_column("length_um\nabc\n", "length_um"), ParseError);
    CHECK_THROWS_AS(read_csv_column("a,b\n1\n", "a"), ParseError);
    CHECK_THROWS_AS(read_csv_column("", "a"), ParseError);
    CHECK_THROWS_AS(read_csv_column("length_um\n1\n", "length_um", ObjectClass::Fiber), ParseError);
}

TEST_CASE("report serialization") {
    const GroupReport r = group_report({SampleGroup("A", {1, 1, 1}), SampleGroup("B", {2, 2, 2}),
                                        SampleGroup("C", {1, 1, 1})},
                                       "length_um");
    const auto j = nlohmann::json::parse(group_report_to_json(r));
    CHECK(j.at("groups").size() == 3);
    CHECK(j.at("comparisons")[0].at("t") == "-inf");
    CHECK(j.at("comparisons")[0].at("mean_difference_percent") == 100.0);
    CHECK(j.at("comparisons")[1].at("t").is_null());
    const auto table = group_report_table(r);
    CHECK(table.find("A vs B: difference 100.00%") != std::string::npos);
    CHECK(table.find("t undefined") != std::string::npos);

    AnnotatedImage img;
    img.width = 40;
    img.height = 40;
    img.objects = {{ObjectClass::Fiber, rect_polygon(2, 2, 20, 8)}};
    EvalImage e;
    e.truths = ground_truth_of(img);
    e.predictions = {Detection::from_mask(ObjectClass::Fiber, 0.9, e.truths[0].mask)};
    const auto rep = evaluate({e}, MatchMode::Mask);
    const auto ej = nlohmann::json::parse(evaluation_to_json(rep));
    CHECK(ej.at("map50") == 1.0);
    CHECK(ej.at("classes").at("fiber").at("ap_by_iou").at("0.95") == 1.0);
    CHECK(ej.at("classes").at("vessel").at("ap50").is_null());
    CHECK(evaluation_table(rep).find("n/a") != std::string::npos);
    const std::string pr = pr_curve_table(rep);
    CHECK(std::count(pr.begin(), pr.end(), '\n') == 102);
    CHECK(f1_curve_table(rep).find("0.900000\t1.000000\t1.000000\t1.000000") != std::string::npos);
}

TEST_CASE("dataset preparation writes matching images and labels") {
    const fs::path root = fs::temp_directory_path() / ("fiberscope_prepare_" + std::to_string(::getpid()));
    fs::remove_all(root);
    fs::create_directories(root / "src");

    // Objects painted dark on a light background; labels must land on dark pixels.
    std::mt19937_64 rng(151);
    nlohmann::json via = nlohmann::json::object();
    for (const char* name : {"a.png", "b.png", "c.png", "d.png"}) {
        RgbImage img(150, 100, 230);
        nlohmann::json regions = nlohmann::json::array();
        for (int k = 0; k < 5; ++k) {
            const int x0 = int(rng() % 130), y0 = int(rng() % 80);
            const int x1 = x0 + 4 + int(rng() % 16), y1 = y0 + 4 + int(rng() % 16);
            const BinaryMask m = rasterize(rect_polygon(x0, y0, x1, y1), 150, 100);
            for (int y = 0; y < 100; ++y)
                for (int x = 0; x < 150; ++x)
                    if (m.at(x, y)) std::fill_n(img.pixel(x, y), 3, 20);
            regions.push_back({{"shape_attributes",
                                {{"name", "polygon"}, {"all_points_x", {x0, x1, x1, x0}}, {"all_points_y", {y0, y0, y1, y1}}}},
                               {"region_attributes", {{"class", k == 0 ? "vessel" : "fiber"}}}});
        }
        std::ofstream(root / "src" / name, std::ios::binary).write(
            reinterpret_cast<const char*>(encode_png(img).data()), std::streamsize(encode_png(img).size()));
        via[std::string(name) + "0"] = {{"filename", name}, {"regions", regions}, {"file_attributes", nlohmann::json::object()}};
    }

    PrepareOptions opt;
    opt.tile = 64;
    opt.train_fraction = 0.5;
    opt.seed = 7;
    opt.augment.horizontal_flip = true;
    opt.augment.rotations = {90};
    const auto sum = prepare_dataset(via.dump(), root / "src", root / "out", opt);
    CHECK(sum.source_images == 4);
    CHECK(fs::exists(root / "out" / "data.yaml"));

    std::map<std::string, std::set<std::string>> sources;
    int checked = 0;
    for (const char* side : {"train", "val"}) {
        std::set<std::string> images, labels;
        for (const auto& e : fs::directory_iterator(root / "out" / "images" / side)) images.insert(e.path().stem());
        for (const auto& e : fs::directory_iterator(root / "out" / "labels" / side)) labels.insert(e.path().stem());
        CHECK(images == labels);
        for (const auto& id : images) {
            sources[side].insert(id.substr(0, 1));
            if (std::string_view(side) == "val") {
                CHECK(id.find("_fh") == std::string::npos);
                CHECK(id.find("_r") == std::string::npos);
            }
            const auto bytes = read_text(root / "out" / "images" / side / (id + ".png"));
            const RgbImage img = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
            REQUIRE(img.width() == 64);
            REQUIRE(img.height() == 64);
            for (const auto& o : parse_label_file(read_text(root / "out" / "labels" / side / (id + ".txt")), 64, 64)) {
                const BinaryMask m = rasterize(o.polygon, 64, 64);
                for (int y = 0; y < 64; ++y)
                    for (int x = 0; x < 64; ++x)
                        if (m.at(x, y)) CHECK(img.pixel(x, y)[0] == 20);
                ++checked;
            }
        }
    }
    CHECK(checked > 20);
    CHECK(!sources["train"].empty());
    CHECK(!sources["val"].empty());
    for (const auto& s : sources["train"]) CHECK(!sources["val"].count(s));
    CHECK(sum.labels.train_images > sum.labels.val_images);
    fs::remove_all(root);
}

}
