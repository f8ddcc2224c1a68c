#include "fiberscope/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "fiberscope/error.hpp"

namespace fiberscope {

std::optional<double> confidence_preset(const std::string& name) {
    if (name == "default") return kDefaultConfidence;
    if (name == "paper-f1-optimal") return kF1OptimalCutoff;
    return std::nullopt;
}

BoundingBox LetterboxTransform::to_input(const BoundingBox& b) const {
    const Point a = to_input(Point{b.x0, b.y0}), c = to_input(Point{b.x1, b.y1});
    return {a.x, a.y, c.x, c.y};
}

BoundingBox LetterboxTransform::to_source(const BoundingBox& b) const {
    const Point a = to_source(Point{b.x0, b.y0}), c = to_source(Point{b.x1, b.y1});
    return {a.x, a.y, c.x, c.y};
}

LetterboxTransform letterbox(int width, int height, int input_size) {
    if (width < 1 || height < 1) throw InvalidArgument("letterbox: empty image");
    if (input_size < 32 || input_size % 32 != 0)
        throw InvalidArgument("letterbox: input size must be a positive multiple of 32");
    LetterboxTransform t;
    t.input_size = input_size;
    t.source_width = width;
    t.source_height = height;
    t.scale = double(input_size) / std::max(width, height);
    const int w = std::clamp(int(std::lround(width * t.scale)), 1, input_size);
    const int h = std::clamp(int(std::lround(height * t.scale)), 1, input_size);
    t.pad_x = (input_size - w) / 2;
    t.pad_y = (input_size - h) / 2;
    return t;
}

Preprocessed preprocess(const RgbImage& image, int input_size) {
    if (image.empty()) throw InvalidArgument("preprocess: empty image");
    Preprocessed out;
    out.transform = letterbox(image.width(), image.height(), input_size);
    const auto& t = out.transform;
    const int w = std::clamp(int(std::lround(image.width() * t.scale)), 1, input_size);
    const int h = std::clamp(int(std::lround(image.height() * t.scale)), 1, input_size);

    const cv::Mat src(image.height(), image.width(), CV_8UC3,
                      const_cast<std::uint8_t*>(image.data().data()));
    cv::Mat canvas(input_size, input_size, CV_8UC3, cv::Scalar::all(kLetterboxFill));
    cv::Mat roi = canvas(cv::Rect(t.pad_x, t.pad_y, w, h));
    if (w == image.width() && h == image.height())
        src.copyTo(roi);
    else
        cv::resize(src, roi, cv::Size(w, h), 0, 0, cv::INTER_LINEAR);

    const std::size_t plane = std::size_t(input_size) * input_size;
    out.tensor.resize(3 * plane);
    for (int y = 0; y < input_size; ++y) {
        const std::uint8_t* row = canvas.ptr<std::uint8_t>(y);
        for (int x = 0; x < input_size; ++x)
            for (int c = 0; c < 3; ++c)
                out.tensor[c * plane + std::size_t(y) * input_size + x] = row[x * 3 + c] / 255.0f;
    }
    return out;
}

int expected_anchor_count(int input_size) {
    int n = 0;
    for (int s : {8, 16, 32}) n += (input_size / s) * (input_size / s);
    return n;
}

void RawPrediction::validate() const {
    const auto fail = [](const std::string& what, long expected, long actual) {
        std::ostringstream o;
        o << "model output " << what << ": expected " << expected << ", got " << actual;
        throw ModelContractError(o.str());
    };
    if (input_size <= 0 || input_size % 32 != 0) fail("input size multiple of 32", 32, input_size);
    if (num_classes < 1) fail("class count", 1, num_classes);
    if (num_masks < 1) fail("mask prototype count", 1, num_masks);
    if (anchors != expected_anchor_count(input_size))
        fail("anchor count", expected_anchor_count(input_size), anchors);
    if (long(candidates.size()) != long(anchors) * row_width())
        fail("candidate buffer length", long(anchors) * row_width(), long(candidates.size()));
    if (proto_h != input_size / 4) fail("prototype height", input_size / 4, proto_h);
    if (proto_w != input_size / 4) fail("prototype width", input_size / 4, proto_w);
    if (long(prototypes.size()) != long(num_masks) * proto_h * proto_w)
        fail("prototype buffer length", long(num_masks) * proto_h * proto_w, long(prototypes.size()));
}

std::vector<Candidate> decode(const RawPrediction& raw, double conf_threshold) {
    raw.validate();
    std::vector<Candidate> out;
    const int k = raw.row_width();
    for (int a = 0; a < raw.anchors; ++a) {
        const float* r = raw.candidates.data() + std::size_t(a) * k;
        int best = 0;
        for (int c = 1; c < raw.num_classes; ++c)
            if (r[4 + c] > r[4 + best]) best = c;
        const float score = r[4 + best];
        if (!(score >= conf_threshold)) continue;
        Candidate c;
        c.box = {r[0] - r[2] / 2.0, r[1] - r[3] / 2.0, r[0] + r[2] / 2.0, r[1] + r[3] / 2.0};
        c.class_index = best;
        c.confidence = score;
        c.coefficients.assign(r + 4 + raw.num_classes, r + k);
        c.anchor = a;
        out.push_back(std::move(c));
    }
    return out;
}

bool candidate_order(const Candidate& a, const Candidate& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.box.x0 != b.box.x0) return a.box.x0 < b.box.x0;
    if (a.box.y0 != b.box.y0) return a.box.y0 < b.box.y0;
    return a.anchor < b.anchor;
}

std::vector<Candidate> nms(std::vector<Candidate> candidates, double iou_threshold) {
    std::sort(candidates.begin(), candidates.end(), candidate_order);
    std::vector<Candidate> kept;
    for (auto& c : candidates) {
        bool suppressed = false;
        for (const auto& k : kept)
            if (k.class_index == c.class_index && box_iou(k.box, c.box) > iou_threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(std::move(c));
    }
    return kept;
}

std::optional<PlacedMask> compose_mask(const std::vector<float>& coefficients,
                                       const RawPrediction& raw, const BoundingBox& box,
                                       const LetterboxTransform& t, const MaskOptions& options) {
    if (int(coefficients.size()) != raw.num_masks) {
        std::ostringstream o;
        o << "mask coefficients: expected " << raw.num_masks << ", got " << coefficients.size();
        throw ModelContractError(o.str());
    }
    if (!(options.threshold > 0.0 && options.threshold < 1.0))
        throw InvalidArgument("mask threshold must be in (0, 1)");
    const BoundingBox crop = box.dilated(options.box_dilation);
    const BoundingBox src = t.to_source(crop);
    const PixelRect rect =
        PixelRect{int(std::floor(src.x0)), int(std::floor(src.y0)), int(std::ceil(src.x1)),
                  int(std::ceil(src.y1))}
            .intersect({0, 0, t.source_width, t.source_height});
    if (rect.empty()) return std::nullopt;

    // sigmoid(v) > threshold  <=>  v > logit(threshold).
    const double cut = std::log(options.threshold / (1.0 - options.threshold));
    const double sx = double(t.input_size) / raw.proto_w, sy = double(t.input_size) / raw.proto_h;

    // Prototype combination over the proto cells the crop can touch.
    const int px0 = std::clamp(int(std::floor(crop.x0 / sx - 0.5)), 0, raw.proto_w - 1);
    const int px1 = std::clamp(int(std::floor(crop.x1 / sx - 0.5)) + 1, 0, raw.proto_w - 1);
    const int py0 = std::clamp(int(std::floor(crop.y0 / sy - 0.5)), 0, raw.proto_h - 1);
    const int py1 = std::clamp(int(std::floor(crop.y1 / sy - 0.5)) + 1, 0, raw.proto_h - 1);
    const int fw = px1 - px0 + 1, fh = py1 - py0 + 1;
    std::vector<double> field(std::size_t(fw) * fh, 0.0);
    const std::size_t plane = std::size_t(raw.proto_w) * raw.proto_h;
    for (int m = 0; m < raw.num_masks; ++m) {
        const double c = coefficients[m];
        if (c == 0.0) continue;
        const float* p = raw.prototypes.data() + m * plane;
        for (int y = 0; y < fh; ++y)
            for (int x = 0; x < fw; ++x)
                field[std::size_t(y) * fw + x] += c * p[std::size_t(py0 + y) * raw.proto_w + px0 + x];
    }
    const auto at = [&](int x, int y) {
        x = std::clamp(x, px0, px1);
        y = std::clamp(y, py0, py1);
        return field[std::size_t(y - py0) * fw + (x - px0)];
    };

    PlacedMask mask{rect.x0, rect.y0, BinaryMask(rect.width(), rect.height())};
    bool any = false;
    for (int y = rect.y0; y < rect.y1; ++y) {
        const double v = (y + 0.5) * t.scale + t.pad_y;
        if (v < crop.y0 || v >= crop.y1) continue;
        const double fy = std::clamp(v / sy - 0.5, 0.0, double(raw.proto_h - 1));
        const int y0 = int(std::floor(fy));
        const double wy = fy - y0;
        for (int x = rect.x0; x < rect.x1; ++x) {
            const double u = (x + 0.5) * t.scale + t.pad_x;
            if (u < crop.x0 || u >= crop.x1) continue;
            const double fx = std::clamp(u / sx - 0.5, 0.0, double(raw.proto_w - 1));
            const int x0 = int(std::floor(fx));
            const double wx = fx - x0;
            const double val = (1 - wy) * ((1 - wx) * at(x0, y0) + wx * at(x0 + 1, y0)) +
                               wy * ((1 - wx) * at(x0, y0 + 1) + wx * at(x0 + 1, y0 + 1));
            if (val > cut) {
                mask.local.set(x - rect.x0, y - rect.y0);
                any = true;
            }
        }
    }
    if (!any) return std::nullopt;
    return mask.trimmed();
}

std::vector<Detection> postprocess(const RawPrediction& raw, const LetterboxTransform& t,
                                   const InferenceOptions& options, int* discarded) {
    int dropped = 0;
    std::vector<Detection> out;
    for (const auto& c : nms(decode(raw, options.conf_threshold), options.iou_threshold)) {
        const auto cls = class_from_index(c.class_index);
        auto mask = cls ? compose_mask(c.coefficients, raw, c.box, t, options.mask) : std::nullopt;
        if (!mask) {
            ++dropped;
            continue;
        }
        BoundingBox b = t.to_source(c.box);
        b = {std::clamp(b.x0, 0.0, double(t.source_width)), std::clamp(b.y0, 0.0, double(t.source_height)),
             std::clamp(b.x1, 0.0, double(t.source_width)), std::clamp(b.y1, 0.0, double(t.source_height))};
        const PixelRect fb = mask->foreground_bounds();
        b = {std::min(b.x0, double(fb.x0)), std::min(b.y0, double(fb.y0)),
             std::max(b.x1, double(fb.x1)), std::max(b.y1, double(fb.y1))};
        out.push_back(Detection::from_mask(*cls, c.confidence, std::move(*mask), b));
    }
    std::stable_sort(out.begin(), out.end(), confidence_order);
    if (discarded) *discarded = dropped;
    return out;
}

std::filesystem::path model_path_from_env(const std::filesystem::path& fallback) {
    const char* env = std::getenv("FIBERSCOPE_MODEL");
    return env && *env ? std::filesystem::path(env) : fallback;
}

// ---------------------------------------------------------------------------

struct OnnxDetector::Impl {
    cv::dnn::Net net;
    std::mutex mutex;
};

OnnxDetector::OnnxDetector(SessionConfig config)
    : config_(std::move(config)), impl_(std::make_unique<Impl>()) {
    if (config_.input_size < 32 || config_.input_size % 32 != 0)
        throw SessionError("input size must be a positive multiple of 32");
    if (int(config_.class_names.size()) != kNumClasses)
        throw SessionError("class_names must list exactly fiber and vessel");
    try {
        impl_->net = cv::dnn::readNetFromONNX(config_.model_path.string());
    } catch (const cv::Exception& e) {
        throw SessionError("cannot load model " + config_.model_path.string() + ": " + e.what());
    }
    if (impl_->net.empty()) throw SessionError("cannot load model " + config_.model_path.string());
    impl_->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
    impl_->net.setPreferableTarget(config_.use_accelerator ? cv::dnn::DNN_TARGET_OPENCL
                                                           : cv::dnn::DNN_TARGET_CPU);

    // Probe pass to learn and check output shapes.
    Preprocessed probe;
    probe.tensor.assign(std::size_t(3) * config_.input_size * config_.input_size, 0.5f);
    probe.transform = letterbox(config_.input_size, config_.input_size, config_.input_size);
    const RawPrediction raw = forward(probe);
    if (raw.num_classes != int(config_.class_names.size())) {
        std::ostringstream o;
        o << "model class count: expected " << config_.class_names.size() << ", got "
          << raw.num_classes;
        throw ModelContractError(o.str());
    }
    num_masks_ = raw.num_masks;
}

OnnxDetector::~OnnxDetector() = default;

std::string OnnxDetector::name() const { return "onnx:" + config_.model_path.filename().string(); }

RawPrediction OnnxDetector::forward(const Preprocessed& input) const {
    const int s = config_.input_size;
    if (input.tensor.size() != std::size_t(3) * s * s)
        throw InvalidArgument("forward: tensor does not match the session input size");
    const int dims[] = {1, 3, s, s};
    cv::Mat blob(4, dims, CV_32F, const_cast<float*>(input.tensor.data()));

    std::vector<cv::Mat> outs;
    {
        std::lock_guard lock(impl_->mutex);
        try {
            impl_->net.setInput(blob);
            impl_->net.forward(outs, impl_->net.getUnconnectedOutLayersNames());
        } catch (const cv::Exception& e) {
            throw SessionError(std::string("forward pass failed: ") + e.what());
        }
        for (auto& o : outs) o = o.clone();
    }

    const cv::Mat* cand = nullptr;
    const cv::Mat* proto = nullptr;
    for (const auto& o : outs) {
        if (o.dims == 3 && !cand) cand = &o;
        if (o.dims == 4 && !proto) proto = &o;
    }
    if (!cand || !proto)
        throw ModelContractError("model must output a 3-d candidate matrix and a 4-d prototype tensor");

    RawPrediction raw;
    raw.input_size = s;
    raw.num_masks = proto->size[1];
    raw.proto_h = proto->size[2];
    raw.proto_w = proto->size[3];
    const int expected = expected_anchor_count(s);
    const int d1 = cand->size[1], d2 = cand->size[2];
    // Usual export layout is [1, channels, anchors]; [1, anchors, channels]
    // is accepted as well.
    const bool channel_major = d2 == expected;
    if (!channel_major && d1 != expected) {
        std::ostringstream o;
        o << "candidate matrix: expected an axis of " << expected << " anchors, got [1, " << d1
          << ", " << d2 << "]";
        throw ModelContractError(o.str());
    }
    const int k = channel_major ? d1 : d2;
    raw.anchors = channel_major ? d2 : d1;
    raw.num_classes = k - 4 - raw.num_masks;
    if (raw.num_classes < 1) {
        std::ostringstream o;
        o << "candidate rows: expected more than " << 4 + raw.num_masks << " channels, got " << k;
        throw ModelContractError(o.str());
    }
    const float* c = cand->ptr<float>();
    raw.candidates.resize(std::size_t(raw.anchors) * k);
    for (int a = 0; a < raw.anchors; ++a)
        for (int j = 0; j < k; ++j)
            raw.candidates[std::size_t(a) * k + j] =
                channel_major ? c[std::size_t(j) * raw.anchors + a] : c[std::size_t(a) * k + j];
    const float* p = proto->ptr<float>();
    raw.prototypes.assign(p, p + std::size_t(raw.num_masks) * raw.proto_h * raw.proto_w);
    raw.validate();
    return raw;
}

std::vector<Detection> OnnxDetector::detect(const RgbImage& image) const {
    return detect_with(image, config_.options);
}

std::vector<Detection> OnnxDetector::detect_with(const RgbImage& image,
                                                 const InferenceOptions& options) const {
    const Preprocessed in = preprocess(image, config_.input_size);
    return postprocess(forward(in), in.transform, options);
}

std::vector<Detection> Detector::detect_with(const RgbImage& image,
                                             const InferenceOptions& options) const {
    std::vector<Detection> out = detect(image);
    std::erase_if(out, [&](const Detection& d) { return d.confidence < options.conf_threshold; });
    return out;
}

}  // namespace fiberscope
