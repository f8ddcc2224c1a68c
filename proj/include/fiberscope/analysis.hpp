#pragma once

#include <array>
#include <string>
#include <vector>

#include "fiberscope/morphometry.hpp"
#include "fiberscope/pipeline.hpp"

namespace fiberscope {

/// Everything that shapes one analysis run. Snapshotted per job.
struct AnalysisParams {
    InferenceOptions inference;
    int tile_size = kDefaultTileSize;
    int overlap = kDefaultTileOverlap;
    double dedup_iou = kDefaultDedupIou;
    int border_margin = 0;
    CalibrationConfig calibration;
    /// Tile and measurement workers; 0 = hardware threads.
    int workers = 0;

    /// Throws InvalidArgument naming the offending field.
    void validate() const;
};

std::string params_to_json(const AnalysisParams& params);
/// Fields missing from `json` keep their value in `base`. Throws ParseError.
AnalysisParams params_from_json(const std::string& json, AnalysisParams base = {});

struct ClassSummary {
    int count = 0;
    double mean_length_um = 0.0;
    double mean_width_um = 0.0;
    double mean_area_um2 = 0.0;
};

struct AnalysisResult {
    int image_width = 0;
    int image_height = 0;
    /// Sorted by confidence_order; object ids are 1-based positions.
    std::vector<Detection> detections;
    /// records[i] measures detections[i].
    std::vector<MorphometryRecord> records;
    std::vector<std::vector<int>> provenance;
    int duplicates_removed = 0;
    int border_excluded = 0;
    int fragments_joined = 0;
    std::size_t tiles = 0;
    double inference_seconds = 0.0;
    double measure_seconds = 0.0;
    std::vector<std::string> warnings;

    std::array<ClassSummary, kNumClasses> summary() const;
};

/// Tiled detection, merge, then morphometry of every kept object. Objects
/// too small to skeletonize keep a row with bounds-based length and width.
AnalysisResult analyze(const Detector& detector, const ImageSource& source,
                       const AnalysisParams& params);

/// Measures detections in parallel; records[i].object_id = i + 1.
std::vector<MorphometryRecord> measure_all(const std::vector<Detection>& detections,
                                           const CalibrationConfig& calibration, int workers = 0,
                                           int* fallbacks = nullptr);

/// Lossless JSON form; masks are run-length encoded.
std::string result_to_json(const AnalysisResult& result);
/// Throws ParseError.
AnalysisResult result_from_json(const std::string& json);

}  // namespace fiberscope
