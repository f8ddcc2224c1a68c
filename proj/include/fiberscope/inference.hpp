#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fiberscope/detection.hpp"
#include "fiberscope/image.hpp"

namespace fiberscope {

inline constexpr double kDefaultConfidence = 0.25;
inline constexpr double kDefaultNmsIou = 0.7;
inline constexpr double kDefaultMaskThreshold = 0.5;
inline constexpr double kDefaultBoxDilation = 2.0;
/// Confidence cutoff at the F1 optimum of the published model.
inline constexpr double kF1OptimalCutoff = 0.66;

/// Named confidence presets: "default" (0.25) and "paper-f1-optimal" (0.66).
std::optional<double> confidence_preset(const std::string& name);

/// Maps between source-image and network-input coordinates:
/// input = source * scale + pad.
struct LetterboxTransform {
    double scale = 1.0;
    int pad_x = 0;
    int pad_y = 0;
    int input_size = 0;
    int source_width = 0;
    int source_height = 0;

    Point to_input(Point p) const { return {p.x * scale + pad_x, p.y * scale + pad_y}; }
    Point to_source(Point p) const { return {(p.x - pad_x) / scale, (p.y - pad_y) / scale}; }
    BoundingBox to_input(const BoundingBox& b) const;
    BoundingBox to_source(const BoundingBox& b) const;
};

/// Letterbox geometry alone: longer side scaled to `input_size`, the other
/// side rounded, padding split with the smaller half first.
LetterboxTransform letterbox(int width, int height, int input_size);

struct Preprocessed {
    /// 1 x 3 x S x S, RGB, values in [0, 1].
    std::vector<float> tensor;
    LetterboxTransform transform;
};

inline constexpr std::uint8_t kLetterboxFill = 114;

/// Bilinear resize, constant fill 114. Throws InvalidArgument on an empty
/// image or an input size that is not a positive multiple of 32.
Preprocessed preprocess(const RgbImage& image, int input_size);

/// Anchor count for a square input over strides 8, 16 and 32.
int expected_anchor_count(int input_size);

/// Network outputs with candidates stored one row per anchor.
struct RawPrediction {
    int input_size = 0;
    int num_classes = 0;
    int num_masks = 0;
    int anchors = 0;
    /// anchors x (4 + num_classes + num_masks): cx, cy, w, h in input
    /// pixels, class scores, mask coefficients.
    std::vector<float> candidates;
    int proto_h = 0;
    int proto_w = 0;
    /// num_masks x proto_h x proto_w.
    std::vector<float> prototypes;

    int row_width() const { return 4 + num_classes + num_masks; }
    /// Throws ModelContractError naming expected vs actual shapes when the
    /// anchor count, prototype size or buffer lengths disagree with
    /// input_size and the declared dimensions.
    void validate() const;
};

/// Candidate in network-input coordinates.
struct Candidate {
    BoundingBox box;
    int class_index = 0;
    float confidence = 0.0f;
    std::vector<float> coefficients;
    int anchor = 0;
};

/// Rows whose best class score is >= conf_threshold, boxes converted to
/// corners, class = first argmax. Validates `raw` first.
std::vector<Candidate> decode(const RawPrediction& raw, double conf_threshold);

/// (confidence desc, box x0 asc, y0 asc, anchor asc).
bool candidate_order(const Candidate& a, const Candidate& b);

/// Greedy per-class suppression of boxes with IoU > iou_threshold against an
/// already kept box. Output in candidate_order.
std::vector<Candidate> nms(std::vector<Candidate> candidates, double iou_threshold);

struct MaskOptions {
    /// Foreground where sigmoid(coefficients . prototypes) > threshold.
    double threshold = kDefaultMaskThreshold;
    /// Box growth (input pixels) before cropping.
    double box_dilation = kDefaultBoxDilation;
};

/// Instance mask in source-image coordinates. Each source pixel center is
/// mapped into input space, the prototype combination is sampled there
/// bilinearly (half-pixel centers, edge clamped), and the pixel is set when
/// it lies inside the dilated box and passes the threshold. Returns nullopt
/// when nothing passes. Throws ModelContractError on a coefficient count
/// that differs from the prototype count.
std::optional<PlacedMask> compose_mask(const std::vector<float>& coefficients,
                                       const RawPrediction& raw, const BoundingBox& box,
                                       const LetterboxTransform& transform,
                                       const MaskOptions& options = {});

struct InferenceOptions {
    double conf_threshold = kDefaultConfidence;
    double iou_threshold = kDefaultNmsIou;
    MaskOptions mask;
};

/// decode -> nms -> compose_mask -> source coordinates. Candidates whose
/// mask comes out empty are dropped and counted in `discarded`. Boxes are
/// the decoded box in source coordinates, clipped to the image and grown to
/// cover the mask. Sorted by confidence_order.
std::vector<Detection> postprocess(const RawPrediction& raw, const LetterboxTransform& transform,
                                   const InferenceOptions& options, int* discarded = nullptr);

/// Anything that turns an RGB tile into detections in tile coordinates.
class Detector {
public:
    virtual ~Detector() = default;
    /// Must be safe to call concurrently.
    virtual std::vector<Detection> detect(const RgbImage& image) const = 0;
    /// Per-call thresholds. The default keeps detections of detect(image)
    /// with confidence >= options.conf_threshold.
    virtual std::vector<Detection> detect_with(const RgbImage& image,
                                               const InferenceOptions& options) const;
    virtual std::string name() const = 0;
};

struct SessionConfig {
    std::filesystem::path model_path;
    int input_size = 1024;
    std::vector<std::string> class_names{"fiber", "vessel"};
    bool use_accelerator = false;
    InferenceOptions options;
};

/// Model path from FIBERSCOPE_MODEL, else `fallback`.
std::filesystem::path model_path_from_env(const std::filesystem::path& fallback = {});

/// Segmentation network run through OpenCV's DNN module. The network is
/// read once; forward passes are serialized internally, so detect() may be
/// called from several threads.
class OnnxDetector : public Detector {
public:
    /// Throws SessionError when the file cannot be read or a probe forward
    /// pass fails, ModelContractError when its outputs disagree with the
    /// config (class count, anchor count, prototype size).
    explicit OnnxDetector(SessionConfig config);
    ~OnnxDetector() override;

    std::vector<Detection> detect(const RgbImage& image) const override;
    std::vector<Detection> detect_with(const RgbImage& image,
                                       const InferenceOptions& options) const override;
    std::string name() const override;

    /// Forward pass only.
    RawPrediction forward(const Preprocessed& input) const;
    const SessionConfig& config() const { return config_; }
    int mask_prototype_count() const { return num_masks_; }

private:
    struct Impl;
    SessionConfig config_;
    int num_masks_ = 0;
    std::unique_ptr<Impl> impl_;
};

}  // namespace fiberscope
