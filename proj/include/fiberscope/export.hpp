#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fiberscope/analysis.hpp"

namespace fiberscope {

inline constexpr const char* kCsvHeader =
    "object_id,class,length_um,width_um,area_um2,length_px,width_px,area_px2,confidence,x0,y0,x1,y1";

/// Header plus one row per record, ordered by (confidence desc, object_id
/// asc). Micrometer and pixel measures use 3 decimals, confidence 6, box
/// corners 2. Locale independent.
std::string measurements_csv(const std::vector<Detection>& detections,
                             const std::vector<MorphometryRecord>& records);
std::string measurements_csv(const AnalysisResult& result);

struct ZipEntry {
    std::string name;
    std::vector<std::uint8_t> data;
};

/// Uncompressed (stored) archive with fixed timestamps, so equal inputs give
/// equal bytes. Throws InvalidArgument past the 4 GiB classic zip limits.
std::vector<std::uint8_t> write_zip(const std::vector<ZipEntry>& entries);
/// Reads stored archives as written above. Throws ParseError.
std::vector<ZipEntry> read_zip(std::span<const std::uint8_t> bytes);

/// Masks whose full canvas exceeds this are written cropped to their window.
inline constexpr std::int64_t kFullCanvasMaskLimit = std::int64_t(8192) * 8192;

/// `<object_id>_<class>.png` per detection, foreground 255 on a canvas of
/// the full image size (or the mask window above kFullCanvasMaskLimit), plus
/// manifest.json listing files, offsets and sizes.
std::vector<std::uint8_t> masks_zip(const AnalysisResult& result);

/// Detections with confidence >= cutoff drawn as translucent per-class fills
/// with solid outlines. A cutoff above every confidence returns `image`.
RgbImage render_overlay(const RgbImage& image, const std::vector<Detection>& detections,
                        double cutoff);

}  // namespace fiberscope
