#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fiberscope/geometry.hpp"
#include "fiberscope/object_class.hpp"

namespace fiberscope {

struct Detection;

struct CalibrationConfig {
    /// Square pixel edge length.
    double microns_per_pixel = 0.65;

    /// Throws InvalidArgument unless strictly positive and finite.
    void validate() const;
};

enum class LengthMode {
    /// Number of skeleton pixels along the longest path.
    PixelCount,
    /// Euclidean length of the path traced through chords spanning a few
    /// pixels each. Unlike unit/sqrt(2) step weights this has no staircase
    /// bias on oblique lines.
    Euclidean,
};

enum class WidthMode {
    /// Twice the maximum distance to a background pixel center.
    PixelCenters,
    /// Diameter of the largest circle inside the mask that clears the
    /// boundary crack midpoints (halfway between a foreground and a
    /// 4-adjacent background pixel center). Located on a half-pixel lattice,
    /// then refined locally against both the raw midpoints and midpoints
    /// averaged over 7 neighbors along the contour; the larger wins.
    Subpixel,
};

struct MorphometryOptions {
    LengthMode length_mode = LengthMode::Euclidean;
    WidthMode width_mode = WidthMode::Subpixel;
    /// Thinning stops roughly half a width short of each tip and may bend
    /// into a corner there. When set (Euclidean mode only), each end of the
    /// longest path is trimmed by 1.5 inscribed radii and replaced by a ray
    /// along the local path direction out to the mask boundary.
    bool extend_tips = true;
    /// Terminal branches shorter than this (pixels) are pruned before the
    /// longest path is extracted.
    int min_spur_length = 5;
};

/// One-pixel-wide medial representation. Pixels are in the source mask's
/// frame, sorted in raster order.
struct Skeleton {
    struct Pixel {
        int x = 0;
        int y = 0;
        friend bool operator==(const Pixel&, const Pixel&) = default;
        friend auto operator<=>(const Pixel& a, const Pixel& b) {
            return a.y != b.y ? a.y <=> b.y : a.x <=> b.x;
        }
    };

    std::vector<Pixel> pixels;
    /// Indices into `pixels`. Diagonal links are omitted where the two pixels
    /// already connect through a shared 4-neighbor (m-adjacency), so thin
    /// curves form trees.
    std::vector<std::vector<int>> adjacency;

    std::vector<int> endpoints() const;
    bool empty() const { return pixels.empty(); }
};

struct MorphometryRecord {
    int object_id = 0;
    ObjectClass object_class = ObjectClass::Fiber;
    double length_px = 0.0;
    double width_px = 0.0;
    double area_px2 = 0.0;
    double length_um = 0.0;
    double width_um = 0.0;
    double area_um2 = 0.0;
    double confidence = 0.0;
    /// Raw pixel count of the longest skeleton path, without tip extension.
    double skeleton_pixels = 0.0;
};

/// Builds the m-adjacency skeleton graph from a pixel set.
Skeleton make_skeleton(std::vector<Skeleton::Pixel> pixels);

/// Zhang-Suen thinning of the largest 8-connected component, followed by a
/// cleanup pass that removes redundant staircase pixels so that no 2x2 block
/// remains. Throws EmptyGeometryError on an empty mask.
Skeleton thin(const BinaryMask& mask);

/// Removes terminal branches shorter than `min_length` pixels, never taking a
/// junction below two remaining branches.
Skeleton prune_spurs(const Skeleton& skeleton, int min_length);

struct SkeletonPath {
    double length = 0.0;
    /// Indices into Skeleton::pixels of the two path ends (equal for a
    /// single pixel).
    int first = -1;
    int last = -1;
    /// Path nodes from `first` to `last`.
    std::vector<int> nodes;
};

/// Longest path through the skeleton graph via double-sweep search. Exact on
/// trees; on cyclic graphs the best of several sweep candidates. Length
/// counts pixels: a straight run of n pixels has length n in both modes.
/// In Euclidean mode the path is chosen with diagonal steps weighted
/// sqrt(2), then measured along chords.
SkeletonPath longest_path(const Skeleton& skeleton, LengthMode mode = LengthMode::PixelCount);

double skeleton_length(const Skeleton& skeleton, LengthMode mode = LengthMode::PixelCount);

/// Exact Euclidean distance of each pixel to the nearest background pixel
/// center, with everything outside the mask treated as background. Returned
/// row-major, 0 on background.
std::vector<double> distance_transform(const BinaryMask& mask);

/// Twice the maximum distance-transform value.
double width_from_distance_transform(const BinaryMask& mask);

/// Width estimate of a mask under the given mode.
double estimate_width(const BinaryMask& mask, WidthMode mode);

/// Length, width and area of a single object mask, in pixels, plus unit
/// conversion. Throws EmptyGeometryError on masks with fewer than 3 pixels.
MorphometryRecord measure_mask(const BinaryMask& mask, const CalibrationConfig& calibration,
                               const MorphometryOptions& options = {});

/// Area comes from the detection's contour; length and width from its mask.
MorphometryRecord measure(const Detection& detection, const CalibrationConfig& calibration,
                          const MorphometryOptions& options = {});

/// Fills the micrometer fields from the pixel fields.
void apply_calibration(MorphometryRecord& record, const CalibrationConfig& calibration);

}  // namespace fiberscope
