#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fiberscope/geometry.hpp"
#include "fiberscope/object_class.hpp"

namespace fiberscope {

struct AnnotatedObject {
    ObjectClass object_class = ObjectClass::Fiber;
    Polygon polygon{{{0, 0}, {1, 0}, {1, 1}}};
};

/// Geometric change applied to a source image, in the order listed:
/// flips, then a clockwise quarter-turn count, then uniform scale, then an
/// arbitrary rotation about the image center (canvas size kept).
struct ImageTransform {
    bool flip_h = false;
    bool flip_v = false;
    int quarter_turns = 0;
    double scale = 1.0;
    double angle_deg = 0.0;

    bool identity() const {
        return !flip_h && !flip_v && quarter_turns % 4 == 0 && scale == 1.0 && angle_deg == 0.0;
    }
    std::string tag() const;
};

struct AnnotatedImage {
    /// Unique sample id; crops and augmentations derive theirs from it.
    std::string id;
    /// Id of the annotated source image this sample came from.
    std::string source_id;
    std::string image_path;
    int width = 0;
    int height = 0;
    std::vector<AnnotatedObject> objects;
    /// Crop window in the (transformed) source frame; full image when not cropped.
    PixelRect window;
    ImageTransform transform;
};

struct ViaParseResult {
    std::vector<AnnotatedImage> images;
    /// Regions skipped for having fewer than 3 distinct vertices or zero area.
    int dropped_regions = 0;
    /// Non-polygon regions (points, circles, ...) skipped.
    int skipped_shapes = 0;
};

/// Image dimensions by filename, used when the annotation document does not
/// carry them.
using ImageSizeLookup = std::function<std::optional<std::pair<int, int>>(const std::string&)>;

/// Parses a VIA export (1.x or 2.x, bare or wrapped in `_via_img_metadata`).
/// Image size comes from `size_lookup`, else from `width`/`height` file
/// attributes, else from the vertex extent. Polygons are clipped to the
/// image. The class is read from the first region attribute whose value
/// names a class (keys "class", "type", "label", "name" are tried first).
/// Throws ParseError on malformed structure or an unknown class label; the
/// message names the file and region index.
ViaParseResult parse_via_annotations(std::string_view document,
                                     const ImageSizeLookup& size_lookup = {});

/// Sutherland-Hodgman clip against an axis-aligned rectangle. Returns
/// nullopt when nothing with nonzero area remains.
std::optional<Polygon> clip_polygon(const Polygon& polygon, const BoundingBox& rect);

/// Tile origins along one axis: multiples of `tile` with the last clamped to
/// `extent - tile`. A single origin 0 when extent <= tile.
std::vector<int> tile_origins(int extent, int tile);

/// Non-overlapping tiles. Images smaller than the tile are padded (the tile
/// keeps its full size; pixels outside the image are padding). Objects keep
/// their clipped part when it retains at least `min_area_fraction` of the
/// original polygon area.
std::vector<AnnotatedImage> crop_to_training_tiles(const AnnotatedImage& image, int tile,
                                                   double min_area_fraction = 0.10);

struct AugmentationSpec {
    bool horizontal_flip = true;
    bool vertical_flip = true;
    /// Multiples of 90 degrees, clockwise.
    std::vector<int> rotations{90};
    /// Each in (0.25, 4.0).
    std::vector<double> scale_factors;
    /// Arbitrary-angle rotations drawn uniformly in [0, 360) from `seed`.
    /// Off by default; polygons are clipped to the unchanged canvas.
    int random_rotations = 0;
    std::uint64_t seed = 0;

    /// Throws InvalidArgument on a scale outside (0.25, 4) or an angle that
    /// is not a multiple of 90.
    void validate() const;
};

/// Point map of a transform for a W x H source (continuous coordinates).
Point transform_point(const ImageTransform& t, Point p, int width, int height);
/// Output size of a transform for a W x H source.
std::pair<int, int> transformed_size(const ImageTransform& t, int width, int height);

/// One output per enabled transform, in this order: h-flip, v-flip,
/// rotations, scales, random rotations. An identity spec gives an empty list.
std::vector<AnnotatedImage> augment(const AnnotatedImage& image, const AugmentationSpec& spec);

/// Applies one transform to an annotated image.
AnnotatedImage apply_transform(const AnnotatedImage& image, const ImageTransform& t);

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> val;
    double train_fraction = 0.85;
    std::uint64_t seed = 0;
};

/// Shuffled partition, deterministic in `seed`. `groups[i]` names the
/// source of `ids[i]`; samples sharing a group land on the same side. When
/// groups are given, whole groups are assigned in shuffled order while they
/// fit in the round(train_fraction * n) train budget, so |train| can fall
/// short of the budget when group sizes do not add up to it.
/// Throws InvalidArgument for fewer than 2 samples, a fraction outside
/// (0, 1), duplicate ids or a groups vector of the wrong length.
DatasetSplit split_dataset(const std::vector<std::string>& ids, double train_fraction,
                           std::uint64_t seed, const std::vector<std::string>& groups = {});

/// "c x1 y1 x2 y2 ..." with vertex coordinates normalized by the image size.
std::string label_line(const AnnotatedObject& object, int width, int height);

/// Inverse of label_line over a whole file. Throws ParseError with the line
/// number on malformed input.
std::vector<AnnotatedObject> parse_label_file(std::string_view text, int width, int height);

struct ExportSummary {
    int train_images = 0;
    int val_images = 0;
    int fibers = 0;
    int vessels = 0;
};

/// Writes labels/{train,val}/<id>.txt and data.yaml under out_dir. Samples
/// not named in the split are skipped. Throws IoError naming the path.
ExportSummary export_training_labels(const std::vector<AnnotatedImage>& dataset,
                                     const DatasetSplit& split,
                                     const std::filesystem::path& out_dir);

}  // namespace fiberscope
