#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fiberscope/detection.hpp"

namespace fiberscope {

enum class MatchMode { Box, Mask };

struct GroundTruth {
    ObjectClass object_class = ObjectClass::Fiber;
    PlacedMask mask;

    BoundingBox box() const;
};

/// Predictions and ground truth of one image, in a shared frame.
struct EvalImage {
    std::vector<Detection> predictions;
    std::vector<GroundTruth> truths;
};

struct ScoredPrediction {
    double confidence = 0.0;
    bool true_positive = false;
    /// Index into the image's prediction list, and the matched truth (-1 for FP).
    int prediction = -1;
    int truth = -1;
    int image = 0;
};

/// Per-class greedy match outcome. Entries within a class are sorted by
/// confidence descending, then image, then prediction index.
struct MatchResult {
    double iou_threshold = 0.5;
    std::array<std::vector<ScoredPrediction>, kNumClasses> predictions;
    std::array<int, kNumClasses> truth_count{};

    /// Appends another result, re-sorting each class.
    void merge(const MatchResult& other);
    int true_positives(ObjectClass c) const;
};

/// Greedy matching: per class, each prediction in confidence order takes the
/// unmatched truth of highest IoU (lowest index on ties) if IoU >= threshold.
MatchResult match(const std::vector<Detection>& predictions, const std::vector<GroundTruth>& truth,
                  double iou_threshold, MatchMode mode);

MatchResult match_images(const std::vector<EvalImage>& images, double iou_threshold,
                         MatchMode mode);

/// 101-point interpolated AP. nullopt when the class has no ground truth.
std::optional<double> average_precision(const MatchResult& match, ObjectClass c);

/// Interpolated precision at recall 0.00, 0.01, ..., 1.00 (all zeros when
/// the class has no ground truth).
std::array<double, 101> precision_envelope(const MatchResult& match, ObjectClass c);

inline constexpr int kNumIouThresholds = 10;
/// 0.50, 0.55, ..., 0.95.
double iou_threshold_at(int k);

struct MapResult {
    double map50 = 0.0;
    double map50_95 = 0.0;
    /// AP per class and threshold; nullopt for classes without ground truth.
    std::array<std::array<std::optional<double>, kNumIouThresholds>, kNumClasses> table{};
    std::array<std::optional<double>, kNumClasses> ap50{};
    std::array<std::optional<double>, kNumClasses> ap50_95{};
};

MapResult map_range(const std::vector<EvalImage>& images, MatchMode mode);

struct OperatingPoint {
    double cutoff = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct F1Curve {
    /// Ascending cutoffs: 0, every distinct prediction confidence, 1.
    std::vector<double> cutoffs;
    /// Micro-averaged over classes (pooled TP/FP/FN).
    std::vector<OperatingPoint> aggregate;
    std::array<std::vector<OperatingPoint>, kNumClasses> per_class;
    /// Highest aggregate F1; ties go to the lower cutoff.
    OperatingPoint best;
};

/// Precision, recall and F1 counting only predictions with confidence >= cutoff.
OperatingPoint operating_point(const MatchResult& match, double cutoff,
                               std::optional<ObjectClass> c = std::nullopt);

F1Curve f1_confidence_curve(const MatchResult& match);
F1Curve f1_confidence_curve(const std::vector<EvalImage>& images, MatchMode mode,
                            double iou_threshold);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::optional<double> ap50;
    std::optional<double> ap50_95;
    int truth_count = 0;
};

struct EvaluationReport {
    MatchMode mode = MatchMode::Mask;
    /// P/R/F1 are reported at the F1-optimal cutoff.
    double operating_cutoff = 0.0;
    std::array<ClassMetrics, kNumClasses> per_class{};
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double map50 = 0.0;
    double map50_95 = 0.0;
    std::array<std::array<double, 101>, kNumClasses> pr_curves{};
    F1Curve f1_curve;
    MapResult map;
    std::vector<std::string> notices;
};

EvaluationReport evaluate(const std::vector<EvalImage>& images, MatchMode mode);

std::string to_string(MatchMode mode);

}  // namespace fiberscope
