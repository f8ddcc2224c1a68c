#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "fiberscope/detection.hpp"
#include "fiberscope/error.hpp"
#include "fiberscope/image_source.hpp"
#include "fiberscope/inference.hpp"

namespace fiberscope {

inline constexpr int kDefaultTileSize = 1024;
inline constexpr int kDefaultTileOverlap = 256;
inline constexpr double kDefaultDedupIou = 0.5;

struct Tile {
    int index = 0;
    /// Region of the image; smaller than tile_size only when the image is.
    PixelRect rect;
};

struct TileGrid {
    int image_width = 0;
    int image_height = 0;
    int tile_size = 0;
    int overlap = 0;
    std::vector<int> x_origins;
    std::vector<int> y_origins;
    /// Row-major over (y, x) origins.
    std::vector<Tile> tiles;
};

/// Origins 0, step, 2*step, ... with step = tile_size - overlap, the last one
/// clamped to size - tile_size. An axis shorter than the tile gets a single
/// tile covering it. Throws InvalidArgument unless tile_size > overlap >= 0
/// and the image is non-empty.
TileGrid plan_tiles(int width, int height, int tile_size, int overlap);

/// Greedy by (confidence desc, mask area desc, box x0 asc, y0 asc, input
/// position): keep a detection unless a kept one of the same class has mask
/// IoU above `iou_threshold`.
std::vector<Detection> dedup(std::vector<Detection> detections, double iou_threshold);

struct BorderExclusion {
    std::vector<Detection> kept;
    int excluded = 0;
};

/// Drops detections with any foreground pixel at distance <= margin from an
/// image edge (column 0 is at distance 0).
BorderExclusion exclude_border(std::vector<Detection> detections, int width, int height,
                               int margin = 0);

/// A detection in global coordinates with where it came from.
struct TileDetection {
    Detection detection;
    int tile = 0;
    PixelRect tile_rect;
    /// Mask reaches a tile edge that lies inside the image.
    bool tile_cut = false;
};

/// Marks tile-cut and moves a tile-local detection into global coordinates.
TileDetection place_tile_detection(const Detection& local, const Tile& tile, int image_width,
                                   int image_height);

struct MergeOptions {
    double dedup_iou = kDefaultDedupIou;
    int border_margin = 0;
};

struct MergedDetectionSet {
    std::vector<Detection> detections;
    /// Sorted tile indices that contributed to each detection.
    std::vector<std::vector<int>> provenance;
    int duplicates_removed = 0;
    int border_excluded = 0;
    /// Cut fragments joined into a single detection.
    int fragments_joined = 0;
};

/// Cut detections first yield to any whole same-class detection that covers
/// more than dedup_iou of their pixels. Remaining cut fragments from
/// overlapping tiles are joined by mask union when their IoU inside the
/// shared tile region exceeds dedup_iou. Then dedup() and exclude_border().
/// The result depends only on the input set, not its order.
MergedDetectionSet merge_tile_detections(std::vector<TileDetection> detections, int width,
                                         int height, const MergeOptions& options = {});

/// Failure while processing one tile.
class TileError : public SessionError {
public:
    TileError(int tile, PixelRect rect, const std::string& what);
    int tile() const { return tile_; }
    const PixelRect& rect() const { return rect_; }

private:
    int tile_;
    PixelRect rect_;
};

struct TilingOptions {
    /// 0 means one worker per hardware thread.
    int workers = 0;
    MergeOptions merge;
    /// Per-run detector thresholds; the detector's own defaults when unset.
    std::optional<InferenceOptions> inference;
    /// Called from worker threads after each tile; must be thread-safe.
    std::function<void(std::size_t done, std::size_t total)> progress;
};

struct TiledRun {
    MergedDetectionSet merged;
    std::size_t tiles = 0;
    double seconds = 0.0;
};

/// Reads every tile, runs the detector on a pool of workers and merges.
/// Throws InvalidArgument when the grid does not match the source, and
/// TileError for the lowest-index failing tile.
TiledRun run_tiled(const Detector& detector, const ImageSource& source, const TileGrid& grid,
                   const TilingOptions& options = {});

/// Largest bounding-box side over all detections; 0 when empty.
int longest_extent(const std::vector<Detection>& detections);

}  // namespace fiberscope
