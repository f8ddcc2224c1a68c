#pragma once

#include "fiberscope/inference.hpp"

namespace fiberscope {

struct ThresholdDetectorOptions {
    /// Foreground when the channel mean is below this.
    int max_intensity = 160;
    /// Components smaller than this are ignored.
    int min_area = 16;
    /// Vessel when mean blue exceeds mean red by more than this.
    int vessel_blue_margin = 30;
};

/// Model-free backend: dark 8-connected components on a light background.
/// Confidence is the component's mean darkness, 1 - mean/255. Meant for
/// synthetic scenes, stub deployments and pipeline benchmarks.
class ThresholdDetector : public Detector {
public:
    explicit ThresholdDetector(ThresholdDetectorOptions options = {}) : options_(options) {}
    std::vector<Detection> detect(const RgbImage& image) const override;
    std::string name() const override { return "threshold"; }

private:
    ThresholdDetectorOptions options_;
};

}  // namespace fiberscope
