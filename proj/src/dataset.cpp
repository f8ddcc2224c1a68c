#include "fiberscope/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "fiberscope/error.hpp"
#include "json.hpp"

namespace fiberscope {

using nlohmann::json;

std::string ImageTransform::tag() const {
    std::string s;
    if (flip_h) s += "fh";
    if (flip_v) s += "fv";
    if (quarter_turns % 4) s += "r" + std::to_string((quarter_turns % 4 + 4) % 4 * 90);
    if (scale != 1.0) {
        std::ostringstream o;
        o << "s" << scale;
        s += o.str();
    }
    if (angle_deg != 0.0) {
        std::ostringstream o;
        o << "a" << angle_deg;
        s += o.str();
    }
    return s.empty() ? "id" : s;
}

// ---------------------------------------------------------------------------
// VIA

namespace {

std::optional<ObjectClass> class_of_value(const json& v) {
    if (v.is_string()) return parse_class(v.get<std::string>());
    if (v.is_object())  // checkbox attribute: {"fiber": true}
        for (auto it = v.begin(); it != v.end(); ++it)
            if (it.value().is_boolean() && it.value().get<bool>())
                if (auto c = parse_class(it.key())) return c;
    return std::nullopt;
}

std::optional<ObjectClass> region_class(const json& attrs, std::string& seen) {
    if (!attrs.is_object()) return std::nullopt;
    for (const char* key : {"class", "type", "label", "name"})
        if (attrs.contains(key)) {
            if (auto c = class_of_value(attrs[key])) return c;
            seen = attrs[key].dump();
        }
    for (auto it = attrs.begin(); it != attrs.end(); ++it) {
        if (auto c = class_of_value(it.value())) return c;
        if (seen.empty()) seen = it.value().dump();
    }
    return std::nullopt;
}

std::vector<Point> region_points(const json& shape, bool& polygon_shape) {
    polygon_shape = true;
    const std::string name = shape.value("name", "");
    std::vector<Point> pts;
    if (name == "polygon" || name == "polyline") {
        const auto& xs = shape.at("all_points_x");
        const auto& ys = shape.at("all_points_y");
        if (!xs.is_array() || !ys.is_array() || xs.size() != ys.size())
            throw ParseError("all_points_x and all_points_y must be arrays of equal length");
        for (std::size_t i = 0; i < xs.size(); ++i)
            pts.push_back({xs[i].get<double>(), ys[i].get<double>()});
    } else if (name == "rect") {
        const double x = shape.at("x").get<double>(), y = shape.at("y").get<double>();
        const double w = shape.at("width").get<double>(), h = shape.at("height").get<double>();
        pts = {{x, y}, {x + w, y}, {x + w, y + h}, {x, y + h}};
    } else {
        polygon_shape = false;
    }
    return pts;
}

std::optional<int> int_attribute(const json& attrs, const char* key) {
    if (!attrs.is_object() || !attrs.contains(key)) return std::nullopt;
    const auto& v = attrs[key];
    if (v.is_number()) return v.get<int>();
    if (v.is_string()) {
        int out = 0;
        const auto s = v.get<std::string>();
        if (std::from_chars(s.data(), s.data() + s.size(), out).ec == std::errc{}) return out;
    }
    return std::nullopt;
}

}  // namespace

ViaParseResult parse_via_annotations(std::string_view document, const ImageSizeLookup& size_lookup) {
    json doc;
    try {
        doc = json::parse(document);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("VIA document is not valid JSON: ") + e.what());
    }
    if (doc.is_object() && doc.contains("_via_img_metadata")) doc = doc["_via_img_metadata"];
    if (!doc.is_object()) throw ParseError("VIA document: top level must be an object of files");

    ViaParseResult out;
    std::set<std::string> used_ids;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const json& file = it.value();
        const std::string key = it.key();
        if (!file.is_object() || !file.contains("filename"))
            throw ParseError("VIA record '" + key + "': missing filename");
        const std::string filename = file["filename"].get<std::string>();
        const auto locus = [&](std::size_t r) {
            return "VIA file '" + filename + "' region " + std::to_string(r) + ": ";
        };

        std::vector<json> regions;
        if (file.contains("regions")) {
            const json& rs = file["regions"];
            if (rs.is_array()) {
                for (const auto& r : rs) regions.push_back(r);
            } else if (rs.is_object()) {
                // 1.x keys regions by stringified index.
                std::vector<std::pair<long, json>> keyed;
                for (auto r = rs.begin(); r != rs.end(); ++r) {
                    char* end = nullptr;
                    const long k = std::strtol(r.key().c_str(), &end, 10);
                    keyed.push_back({*end ? long(keyed.size()) : k, r.value()});
                }
                std::stable_sort(keyed.begin(), keyed.end(),
                                 [](const auto& a, const auto& b) { return a.first < b.first; });
                for (auto& [k, r] : keyed) regions.push_back(std::move(r));
            } else if (!rs.is_null()) {
                throw ParseError("VIA file '" + filename + "': regions must be a list or object");
            }
        }

        AnnotatedImage img;
        img.id = filename;
        for (int n = 2; used_ids.count(img.id); ++n) img.id = filename + "#" + std::to_string(n);
        used_ids.insert(img.id);
        img.source_id = img.id;
        img.image_path = filename;

        std::vector<std::pair<ObjectClass, std::vector<Point>>> raw;
        double max_x = 0, max_y = 0;
        for (std::size_t r = 0; r < regions.size(); ++r) {
            const json& region = regions[r];
            if (!region.is_object() || !region.contains("shape_attributes"))
                throw ParseError(locus(r) + "missing shape_attributes");
            bool is_polygon = false;
            std::vector<Point> pts;
            try {
                pts = region_points(region["shape_attributes"], is_polygon);
            } catch (const json::exception& e) {
                throw ParseError(locus(r) + "bad shape_attributes: " + e.what());
            } catch (const ParseError& e) {
                throw ParseError(locus(r) + e.what());
            }
            if (!is_polygon) {
                ++out.skipped_shapes;
                continue;
            }
            std::string seen;
            const auto cls = region_class(region.value("region_attributes", json::object()), seen);
            if (!cls)
                throw ParseError(locus(r) + "unknown class label" +
                                 (seen.empty() ? std::string(" (no attributes)") : " " + seen));
            for (const auto& p : pts) {
                if (!std::isfinite(p.x) || !std::isfinite(p.y))
                    throw ParseError(locus(r) + "non-finite vertex");
                max_x = std::max(max_x, p.x);
                max_y = std::max(max_y, p.y);
            }
            raw.push_back({*cls, std::move(pts)});
        }

        std::optional<std::pair<int, int>> size;
        if (size_lookup) size = size_lookup(filename);
        if (!size) {
            const json attrs = file.value("file_attributes", json::object());
            const auto w = int_attribute(attrs, "width"), h = int_attribute(attrs, "height");
            if (w && h) size = std::pair{*w, *h};
        }
        if (!size) size = std::pair{std::max(1, int(std::ceil(max_x))), std::max(1, int(std::ceil(max_y)))};
        img.width = size->first;
        img.height = size->second;
        img.window = {0, 0, img.width, img.height};

        const BoundingBox frame{0, 0, double(img.width), double(img.height)};
        for (auto& [cls, pts] : raw) {
            const auto poly = Polygon::try_make(std::move(pts));
            const auto clipped = poly ? clip_polygon(*poly, frame) : std::nullopt;
            if (!clipped) {
                ++out.dropped_regions;
                continue;
            }
            img.objects.push_back({cls, *clipped});
        }
        out.images.push_back(std::move(img));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cropping

std::optional<Polygon> clip_polygon(const Polygon& polygon, const BoundingBox& rect) {
    std::vector<Point> poly = polygon.vertices();
    // Each edge: keep points with sign * (coord - bound) >= 0.
    const auto clip_edge = [](const std::vector<Point>& in, bool x_axis, double bound,
                              double sign) {
        std::vector<Point> out;
        if (in.empty()) return out;
        const auto value = [&](const Point& p) { return sign * ((x_axis ? p.x : p.y) - bound); };
        for (std::size_t i = 0; i < in.size(); ++i) {
            const Point& a = in[i];
            const Point& b = in[(i + 1) % in.size()];
            const double va = value(a), vb = value(b);
            if (va >= 0) out.push_back(a);
            if ((va >= 0) != (vb >= 0)) {
                const double t = va / (va - vb);
                Point q{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
                // Snap the clipped coordinate exactly onto the bound.
                (x_axis ? q.x : q.y) = bound;
                out.push_back(q);
            }
        }
        return out;
    };
    poly = clip_edge(poly, true, rect.x0, 1.0);
    poly = clip_edge(poly, true, rect.x1, -1.0);
    poly = clip_edge(poly, false, rect.y0, 1.0);
    poly = clip_edge(poly, false, rect.y1, -1.0);

    // Drop consecutive duplicates produced by vertices lying on a bound.
    std::vector<Point> clean;
    for (const Point& p : poly)
        if (clean.empty() || !(clean.back() == p)) clean.push_back(p);
    while (clean.size() > 1 && clean.front() == clean.back()) clean.pop_back();
    return Polygon::try_make(std::move(clean));
}

std::vector<int> tile_origins(int extent, int tile) {
    if (tile <= 0) throw InvalidArgument("tile_origins: tile must be positive");
    if (extent <= tile) return {0};
    std::vector<int> out;
    for (int o = 0;; o += tile) {
        if (o + tile >= extent) {
            out.push_back(extent - tile);
            break;
        }
        out.push_back(o);
    }
    return out;
}

std::vector<AnnotatedImage> crop_to_training_tiles(const AnnotatedImage& image, int tile,
                                                   double min_area_fraction) {
    if (tile <= 0) throw InvalidArgument("crop_to_training_tiles: tile must be positive");
    std::vector<AnnotatedImage> out;
    for (int oy : tile_origins(image.height, tile))
        for (int ox : tile_origins(image.width, tile)) {
            AnnotatedImage t;
            t.id = image.id + "_x" + std::to_string(ox) + "_y" + std::to_string(oy);
            t.source_id = image.source_id;
            t.image_path = image.image_path;
            t.width = tile;
            t.height = tile;
            t.window = {image.window.x0 + ox, image.window.y0 + oy, image.window.x0 + ox + tile,
                        image.window.y0 + oy + tile};
            t.transform = image.transform;
            const BoundingBox rect{double(ox), double(oy), double(std::min(ox + tile, image.width)),
                                   double(std::min(oy + tile, image.height))};
            for (const auto& o : image.objects) {
                const auto c = clip_polygon(o.polygon, rect);
                if (!c || c->area() < min_area_fraction * o.polygon.area()) continue;
                t.objects.push_back({o.object_class, c->translated(-ox, -oy)});
            }
            out.push_back(std::move(t));
        }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation

void AugmentationSpec::validate() const {
    for (double s : scale_factors)
        if (!(s > 0.25 && s < 4.0)) throw InvalidArgument("augmentation scale outside (0.25, 4)");
    for (int r : rotations)
        if (r % 90 != 0) throw InvalidArgument("augmentation rotations must be multiples of 90");
    if (random_rotations < 0) throw InvalidArgument("random_rotations must be >= 0");
}

std::pair<int, int> transformed_size(const ImageTransform& t, int width, int height) {
    int w = width, h = height;
    if (((t.quarter_turns % 4) + 4) % 2 == 1) std::swap(w, h);
    if (t.scale != 1.0) {
        w = std::max(1, int(std::lround(w * t.scale)));
        h = std::max(1, int(std::lround(h * t.scale)));
    }
    return {w, h};
}

Point transform_point(const ImageTransform& t, Point p, int width, int height) {
    double w = width, h = height;
    if (t.flip_h) p.x = w - p.x;
    if (t.flip_v) p.y = h - p.y;
    for (int k = 0; k < ((t.quarter_turns % 4) + 4) % 4; ++k) {
        // Clockwise on screen; pixel (i, j) lands on (h - 1 - j, i).
        p = {h - p.y, p.x};
        std::swap(w, h);
    }
    if (t.scale != 1.0) {
        const auto [sw, sh] = transformed_size(t, width, height);
        p = {p.x * sw / w, p.y * sh / h};
        w = sw;
        h = sh;
    }
    if (t.angle_deg != 0.0) {
        const double a = t.angle_deg * std::numbers::pi / 180.0;
        const double c = std::cos(a), s = std::sin(a);
        const double cx = w / 2, cy = h / 2, dx = p.x - cx, dy = p.y - cy;
        p = {cx + dx * c - dy * s, cy + dx * s + dy * c};
    }
    return p;
}

AnnotatedImage apply_transform(const AnnotatedImage& image, const ImageTransform& t) {
    AnnotatedImage out;
    out.id = image.id + "_" + t.tag();
    out.source_id = image.source_id;
    out.image_path = image.image_path;
    std::tie(out.width, out.height) = transformed_size(t, image.width, image.height);
    out.window = {0, 0, out.width, out.height};
    out.transform = t;
    const BoundingBox frame{0, 0, double(out.width), double(out.height)};
    for (const auto& o : image.objects) {
        std::vector<Point> v;
        for (const Point& p : o.polygon.vertices())
            v.push_back(transform_point(t, p, image.width, image.height));
        auto poly = Polygon::try_make(std::move(v));
        if (poly && t.angle_deg != 0.0) poly = clip_polygon(*poly, frame);
        if (poly) out.objects.push_back({o.object_class, *poly});
    }
    return out;
}

std::vector<AnnotatedImage> augment(const AnnotatedImage& image, const AugmentationSpec& spec) {
    spec.validate();
    std::vector<ImageTransform> ts;
    if (spec.horizontal_flip) ts.push_back({.flip_h = true});
    if (spec.vertical_flip) ts.push_back({.flip_v = true});
    for (int r : spec.rotations)
        if (((r / 90) % 4 + 4) % 4) ts.push_back({.quarter_turns = ((r / 90) % 4 + 4) % 4});
    for (double s : spec.scale_factors)
        if (s != 1.0) ts.push_back({.scale = s});
    std::mt19937_64 rng(spec.seed);
    for (int i = 0; i < spec.random_rotations; ++i) {
        // 53-bit uniform in [0, 1), independent of the library's distributions.
        const double u = double(rng() >> 11) * 0x1.0p-53;
        ts.push_back({.angle_deg = 360.0 * u});
    }
    std::vector<AnnotatedImage> out;
    for (const auto& t : ts) out.push_back(apply_transform(image, t));
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

// Fisher-Yates with an explicit bounded draw so the permutation does not
// depend on the standard library's distribution implementation.
template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::uint64_t bound = i;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r;
        do r = rng();
        while (r >= limit);
        std::swap(v[i - 1], v[r % bound]);
    }
}

}  // namespace

DatasetSplit split_dataset(const std::vector<std::string>& ids, double train_fraction,
                           std::uint64_t seed, const std::vector<std::string>& groups) {
    if (ids.size() < 2) throw InvalidArgument("split_dataset: need at least 2 samples");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw InvalidArgument("split_dataset: train_fraction must be in (0, 1)");
    if (!groups.empty() && groups.size() != ids.size())
        throw InvalidArgument("split_dataset: groups must match ids in length");
    if (std::set<std::string>(ids.begin(), ids.end()).size() != ids.size())
        throw InvalidArgument("split_dataset: duplicate sample ids");

    // Group members in first-appearance order.
    std::vector<std::vector<std::size_t>> members;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const std::string& g = groups.empty() ? ids[i] : groups[i];
        auto [it, fresh] = index.try_emplace(g, members.size());
        if (fresh) members.emplace_back();
        members[it->second].push_back(i);
    }
    std::vector<std::size_t> order(members.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    shuffle(order, rng);

    const auto budget = std::size_t(std::llround(train_fraction * double(ids.size())));
    std::vector<char> in_train(ids.size(), 0);
    std::size_t used = 0;
    for (std::size_t g : order)
        if (used + members[g].size() <= budget) {
            used += members[g].size();
            for (std::size_t i : members[g]) in_train[i] = 1;
        }

    DatasetSplit s;
    s.train_fraction = train_fraction;
    s.seed = seed;
    for (std::size_t g : order)
        for (std::size_t i : members[g]) (in_train[i] ? s.train : s.val).push_back(ids[i]);
    return s;
}

// ---------------------------------------------------------------------------
// Label files

namespace {

// Shortest round-trip decimal, always with a fractional part ("0.0", "0.5").
std::string format_coord(double v) {
    if (v == 0.0) v = 0.0;  // drop negative zero
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, res.ptr);
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

}  // namespace

std::string label_line(const AnnotatedObject& object, int width, int height) {
    if (width <= 0 || height <= 0) throw InvalidArgument("label_line: image size must be positive");
    std::string s = std::to_string(class_index(object.object_class));
    for (const Point& p : object.polygon.vertices()) {
        s += ' ';
        s += format_coord(std::clamp(p.x / width, 0.0, 1.0));
        s += ' ';
        s += format_coord(std::clamp(p.y / height, 0.0, 1.0));
    }
    return s;
}

std::vector<AnnotatedObject> parse_label_file(std::string_view text, int width, int height) {
    std::vector<AnnotatedObject> out;
    std::istringstream in{std::string(text)};
    std::string line;
    for (int n = 1; std::getline(in, line); ++n) {
        std::istringstream ls(line);
        std::string tok;
        std::vector<std::string> toks;
        while (ls >> tok) toks.push_back(tok);
        if (toks.empty()) continue;
        const auto bad = [&](const std::string& why) {
            return ParseError("label line " + std::to_string(n) + ": " + why);
        };
        int cls_index = -1;
        if (std::from_chars(toks[0].data(), toks[0].data() + toks[0].size(), cls_index).ec !=
            std::errc{})
            throw bad("class index is not an integer");
        const auto cls = class_from_index(cls_index);
        if (!cls) throw bad("unknown class index " + toks[0]);
        if (toks.size() % 2 != 1 || toks.size() < 7) throw bad("need at least 3 coordinate pairs");
        std::vector<Point> pts;
        for (std::size_t i = 1; i + 1 < toks.size(); i += 2) {
            double x = 0, y = 0;
            const auto px = std::from_chars(toks[i].data(), toks[i].data() + toks[i].size(), x);
            const auto py =
                std::from_chars(toks[i + 1].data(), toks[i + 1].data() + toks[i + 1].size(), y);
            if (px.ec != std::errc{} || py.ec != std::errc{}) throw bad("bad coordinate");
            pts.push_back({x * width, y * height});
        }
        auto poly = Polygon::try_make(std::move(pts));
        if (!poly) throw bad("degenerate polygon");
        out.push_back({*cls, *poly});
    }
    return out;
}

ExportSummary export_training_labels(const std::vector<AnnotatedImage>& dataset,
                                     const DatasetSplit& split,
                                     const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    std::map<std::string, const char*> side;
    for (const auto& id : split.train) side[id] = "train";
    for (const auto& id : split.val) side[id] = "val";

    std::error_code ec;
    for (const char* s : {"train", "val"}) {
        fs::create_directories(out_dir / "labels" / s, ec);
        if (ec) throw IoError("cannot create " + (out_dir / "labels" / s).string() + ": " + ec.message());
        fs::create_directories(out_dir / "images" / s, ec);
        if (ec) throw IoError("cannot create " + (out_dir / "images" / s).string() + ": " + ec.message());
    }

    ExportSummary sum;
    for (const auto& img : dataset) {
        const auto it = side.find(img.id);
        if (it == side.end()) continue;
        const fs::path path = out_dir / "labels" / it->second / (img.id + ".txt");
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot write " + path.string());
        for (const auto& o : img.objects) {
            f << label_line(o, img.width, img.height) << '\n';
            ++(o.object_class == ObjectClass::Fiber ? sum.fibers : sum.vessels);
        }
        if (!f) throw IoError("write failed: " + path.string());
        ++(std::string_view(it->second) == "train" ? sum.train_images : sum.val_images);
    }

    const fs::path manifest = out_dir / "data.yaml";
    std::ofstream m(manifest, std::ios::binary);
    if (!m) throw IoError("cannot write " + manifest.string());
    m << "path: " << fs::absolute(out_dir).lexically_normal().generic_string() << "\n"
      << "train: images/train\n"
      << "val: images/val\n"
      << "nc: " << kNumClasses << "\n"
      << "names:\n";
    for (ObjectClass c : kAllClasses) m << "  " << class_index(c) << ": " << class_name(c) << "\n";
    if (!m) throw IoError("write failed: " + manifest.string());
    return sum;
}

}  // namespace fiberscope
