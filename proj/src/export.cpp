#include "fiberscope/export.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <numeric>

#include "fiberscope/image_source.hpp"
#include "json.hpp"

namespace fiberscope {

namespace {

void append_fixed(std::string& out, double v, int decimals) {
    char buf[64];
    if (v == 0.0) v = 0.0;  // no "-0.000"
    const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, decimals);
    std::string_view s(buf, std::size_t(r.ptr - buf));
    // Values that round to zero lose their sign as well.
    if (s.front() == '-' && s.find_first_not_of("-0.") == std::string_view::npos) s.remove_prefix(1);
    out.append(s);
}

void put16(std::vector<std::uint8_t>& b, std::uint32_t v) {
    b.push_back(std::uint8_t(v));
    b.push_back(std::uint8_t(v >> 8));
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    put16(b, v & 0xFFFF);
    put16(b, v >> 16);
}
std::uint32_t get16(std::span<const std::uint8_t> b, std::size_t at) {
    if (at + 2 > b.size()) throw ParseError("zip: truncated");
    return std::uint32_t(b[at]) | std::uint32_t(b[at + 1]) << 8;
}
std::uint32_t get32(std::span<const std::uint8_t> b, std::size_t at) {
    return get16(b, at) | get16(b, at + 2) << 16;
}

constexpr std::uint32_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01

constexpr std::uint8_t kFiberRgb[3] = {255, 150, 0};
constexpr std::uint8_t kVesselRgb[3] = {0, 170, 255};
constexpr double kAlpha = 0.4;

}  // namespace

std::string measurements_csv(const std::vector<Detection>& detections,
                             const std::vector<MorphometryRecord>& records) {
    if (detections.size() != records.size())
        throw InvalidArgument("measurements_csv: detections and records differ in length");
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (records[a].confidence != records[b].confidence) return records[a].confidence > records[b].confidence;
        return records[a].object_id < records[b].object_id;
    });
    std::string out = kCsvHeader;
    out += '\n';
    for (std::size_t i : order) {
        const MorphometryRecord& r = records[i];
        const BoundingBox& b = detections[i].box;
        out += std::to_string(r.object_id);
        out += ',';
        out += class_name(r.object_class);
        for (double v : {r.length_um, r.width_um, r.area_um2, r.length_px, r.width_px, r.area_px2}) {
            out += ',';
            append_fixed(out, v, 3);
        }
        out += ',';
        append_fixed(out, r.confidence, 6);
        for (double v : {b.x0, b.y0, b.x1, b.y1}) {
            out += ',';
            append_fixed(out, v, 2);
        }
        out += '\n';
    }
    return out;
}

std::string measurements_csv(const AnalysisResult& result) {
    return measurements_csv(result.detections, result.records);
}

std::vector<std::uint8_t> write_zip(const std::vector<ZipEntry>& entries) {
    std::vector<std::uint8_t> out, central;
    for (const auto& e : entries) {
        if (e.data.size() > 0xFFFFFFFFu || out.size() > 0xFFFFFFFFu || e.name.size() > 0xFFFF)
            throw InvalidArgument("write_zip: archive exceeds classic zip limits");
        const std::uint32_t crc = std::uint32_t(
            crc32_z(crc32_z(0L, Z_NULL, 0), e.data.data(), e.data.size()));
        const std::uint32_t offset = std::uint32_t(out.size());
        const std::uint32_t size = std::uint32_t(e.data.size());
        put32(out, 0x04034b50);
        put16(out, 20);
        put16(out, 0);
        put16(out, 0);
        put16(out, 0);
        put16(out, kDosDate);
        put32(out, crc);
        put32(out, size);
        put32(out, size);
        put16(out, std::uint32_t(e.name.size()));
        put16(out, 0);
        out.insert(out.end(), e.name.begin(), e.name.end());
        out.insert(out.end(), e.data.begin(), e.data.end());

        put32(central, 0x02014b50);
        put16(central, 20);
        put16(central, 20);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put16(central, kDosDate);
        put32(central, crc);
        put32(central, size);
        put32(central, size);
        put16(central, std::uint32_t(e.name.size()));
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put16(central, 0);
        put32(central, 0);
        put32(central, offset);
        central.insert(central.end(), e.name.begin(), e.name.end());
    }
    if (entries.size() > 0xFFFF || out.size() > 0xFFFFFFFFu)
        throw InvalidArgument("write_zip: archive exceeds classic zip limits");
    const std::uint32_t cd_offset = std::uint32_t(out.size());
    out.insert(out.end(), central.begin(), central.end());
    put32(out, 0x06054b50);
    put16(out, 0);
    put16(out, 0);
    put16(out, std::uint32_t(entries.size()));
    put16(out, std::uint32_t(entries.size()));
    put32(out, std::uint32_t(central.size()));
    put32(out, cd_offset);
    put16(out, 0);
    return out;
}

std::vector<ZipEntry> read_zip(std::span<const std::uint8_t> b) {
    if (b.size() < 22) throw ParseError("zip: too short");
    std::size_t eocd = b.size() - 22;
    while (get32(b, eocd) != 0x06054b50) {
        if (eocd == 0 || b.size() - eocd > 22 + 0xFFFF) throw ParseError("zip: no end record");
        --eocd;
    }
    const std::uint32_t count = get16(b, eocd + 10);
    std::size_t at = get32(b, eocd + 16);
    std::vector<ZipEntry> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        if (get32(b, at) != 0x02014b50) throw ParseError("zip: bad central header");
        const std::uint32_t method = get16(b, at + 10);
        const std::uint32_t crc = get32(b, at + 16);
        const std::uint32_t size = get32(b, at + 20);
        const std::uint32_t name_len = get16(b, at + 28);
        const std::uint32_t extra = get16(b, at + 30), comment = get16(b, at + 32);
        const std::uint32_t local = get32(b, at + 42);
        if (method != 0) throw ParseError("zip: only stored entries are supported");
        if (at + 46 + name_len > b.size()) throw ParseError("zip: truncated");
        ZipEntry e;
        e.name.assign(reinterpret_cast<const char*>(b.data() + at + 46), name_len);
        if (get32(b, local) != 0x04034b50) throw ParseError("zip: bad local header");
        const std::size_t data = local + 30 + get16(b, local + 26) + get16(b, local + 28);
        if (data + size > b.size()) throw ParseError("zip: truncated entry " + e.name);
        e.data.assign(b.begin() + std::ptrdiff_t(data), b.begin() + std::ptrdiff_t(data + size));
        if (std::uint32_t(crc32_z(crc32_z(0L, Z_NULL, 0), e.data.data(), e.data.size())) != crc)
            throw ParseError("zip: CRC mismatch in " + e.name);
        out.push_back(std::move(e));
        at += 46 + name_len + extra + comment;
    }
    return out;
}

std::vector<std::uint8_t> masks_zip(const AnalysisResult& result) {
    const std::int64_t canvas = std::int64_t(result.image_width) * result.image_height;
    const bool full = canvas <= kFullCanvasMaskLimit;
    std::vector<ZipEntry> entries;
    nlohmann::json objects = nlohmann::json::array();
    for (std::size_t i = 0; i < result.detections.size(); ++i) {
        const Detection& d = result.detections[i];
        const int id = result.records.at(i).object_id;
        const std::string name = std::to_string(id) + "_" + std::string(class_name(d.object_class)) + ".png";
        const BinaryMask m = full ? d.mask.to_canvas(result.image_width, result.image_height) : d.mask.local;
        entries.push_back({name, encode_png(m)});
        objects.push_back({{"object_id", id},
                           {"class", std::string(class_name(d.object_class))},
                           {"file", name},
                           {"confidence", d.confidence},
                           {"x", full ? 0 : d.mask.x},
                           {"y", full ? 0 : d.mask.y},
                           {"width", m.width()},
                           {"height", m.height()}});
    }
    const nlohmann::json manifest{{"image_width", result.image_width},
                                  {"image_height", result.image_height},
                                  {"full_canvas", full},
                                  {"foreground", 255},
                                  {"objects", objects}};
    const std::string text = manifest.dump(2);
    entries.push_back({"manifest.json", std::vector<std::uint8_t>(text.begin(), text.end())});
    return write_zip(entries);
}

RgbImage render_overlay(const RgbImage& image, const std::vector<Detection>& detections, double cutoff) {
    RgbImage out = image;
    const PixelRect frame{0, 0, image.width(), image.height()};
    for (const auto& d : detections) {
        if (!(d.confidence >= cutoff)) continue;
        const std::uint8_t* c = d.object_class == ObjectClass::Fiber ? kFiberRgb : kVesselRgb;
        const PixelRect w = d.mask.window().intersect(frame);
        for (int y = w.y0; y < w.y1; ++y)
            for (int x = w.x0; x < w.x1; ++x) {
                if (!d.mask.at(x, y)) continue;
                const bool edge = !d.mask.at(x - 1, y) || !d.mask.at(x + 1, y) || !d.mask.at(x, y - 1) ||
                                  !d.mask.at(x, y + 1);
                std::uint8_t* p = out.pixel(x, y);
                for (int k = 0; k < 3; ++k)
                    p[k] = edge ? c[k] : std::uint8_t(std::lround((1 - kAlpha) * p[k] + kAlpha * c[k]));
            }
    }
    return out;
}

}  // namespace fiberscope
