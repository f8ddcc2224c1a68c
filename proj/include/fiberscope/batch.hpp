#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fiberscope/dataset.hpp"
#include "fiberscope/evaluation.hpp"
#include "fiberscope/image.hpp"
#include "fiberscope/statistics.hpp"

// File-level helpers behind the command line tools.

namespace fiberscope {

/// Annotated polygons rasterized on the image canvas; polygons that cover
/// no pixel center are left out.
std::vector<GroundTruth> ground_truth_of(const AnnotatedImage& image);

/// Numeric values of one column of a measurement CSV, optionally only rows
/// of one class. Throws ParseError naming the line.
std::vector<double> read_csv_column(std::string_view csv, std::string_view column,
                                    std::optional<ObjectClass> only = std::nullopt);

std::string evaluation_to_json(const EvaluationReport& report);
std::string evaluation_table(const EvaluationReport& report);
/// Tab-separated: recall, then interpolated precision per class.
std::string pr_curve_table(const EvaluationReport& report);
/// Tab-separated: cutoff, aggregate P/R/F1, then F1 per class.
std::string f1_curve_table(const EvaluationReport& report);

std::string group_report_to_json(const GroupReport& report);
std::string group_report_table(const GroupReport& report);

/// Pixels under an ImageTransform, matching transform_point on pixel
/// centers. Flips and quarter turns are exact.
RgbImage transform_image(const RgbImage& source, const ImageTransform& transform);

/// A dataset sample's pixels: the transformed source cropped to its window
/// (padding is black).
RgbImage render_sample(const RgbImage& source, const AnnotatedImage& sample);

struct PrepareOptions {
    int tile = 1024;
    double train_fraction = 0.85;
    std::uint64_t seed = 0;
    double min_area_fraction = 0.10;
    /// Applied to training sources only. Default: none.
    AugmentationSpec augment{false, false, {}, {}, 0, 0};
};

struct PrepareSummary {
    int source_images = 0;
    int dropped_regions = 0;
    int skipped_shapes = 0;
    ExportSummary labels;
};

/// VIA annotations + source images -> tiles, split by source image,
/// augmentation of the training side, then images/{train,val}/<id>.png,
/// labels/{train,val}/<id>.txt and data.yaml under out_dir.
PrepareSummary prepare_dataset(std::string_view via_document, const std::filesystem::path& images_dir,
                               const std::filesystem::path& out_dir, const PrepareOptions& options);

}  // namespace fiberscope
