#include "fiberscope/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

namespace fiberscope {

namespace {

std::vector<int> axis_origins(int size, int tile, int step) {
    std::vector<int> o{0};
    while (o.back() + tile < size) o.push_back(std::min(o.back() + step, size - tile));
    return o;
}

// Cached per-detection facts used by the merge.
struct Entry {
    std::size_t index;
    std::int64_t area;
    PixelRect bounds;
};

bool overlaps(const PixelRect& a, const PixelRect& b) { return !a.intersect(b).empty(); }

PlacedMask mask_union(const PlacedMask& a, const PlacedMask& b) {
    const PixelRect wa = a.window(), wb = b.window();
    const PixelRect w{std::min(wa.x0, wb.x0), std::min(wa.y0, wb.y0), std::max(wa.x1, wb.x1),
                      std::max(wa.y1, wb.y1)};
    PlacedMask out{w.x0, w.y0, BinaryMask(w.width(), w.height())};
    for (const PlacedMask* m : {&a, &b})
        for (int y = 0; y < m->local.height(); ++y) {
            const std::uint8_t* src = m->local.row(y);
            std::uint8_t* dst = out.local.row(y + m->y - w.y0) + (m->x - w.x0);
            for (int x = 0; x < m->local.width(); ++x) dst[x] |= src[x];
        }
    return out;
}

BoundingBox box_union(const BoundingBox& a, const BoundingBox& b) {
    return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

// IoU of the two masks counting only pixels inside `r`.
double restricted_iou(const PlacedMask& a, const PlacedMask& b, const PixelRect& r) {
    const auto count_in = [&](const PlacedMask& m) {
        const PixelRect w = m.window().intersect(r);
        std::int64_t n = 0;
        for (int y = w.y0; y < w.y1; ++y) {
            const std::uint8_t* row = m.local.row(y - m.y);
            for (int x = w.x0; x < w.x1; ++x) n += row[x - m.x];
        }
        return n;
    };
    const PixelRect w = a.window().intersect(b.window()).intersect(r);
    std::int64_t inter = 0;
    for (int y = w.y0; y < w.y1; ++y) {
        const std::uint8_t* ra = a.local.row(y - a.y);
        const std::uint8_t* rb = b.local.row(y - b.y);
        for (int x = w.x0; x < w.x1; ++x) inter += (ra[x - a.x] & rb[x - b.x]);
    }
    const std::int64_t uni = count_in(a) + count_in(b) - inter;
    return uni > 0 ? double(inter) / double(uni) : 0.0;
}

void add_tiles(std::vector<int>& into, const std::vector<int>& from) {
    into.insert(into.end(), from.begin(), from.end());
    std::sort(into.begin(), into.end());
    into.erase(std::unique(into.begin(), into.end()), into.end());
}

// Greedy keep/drop in the dedup priority order; returns kept positions and,
// for each dropped one, the kept position that suppressed it.
struct GreedyResult {
    std::vector<std::size_t> kept;
    std::vector<std::pair<std::size_t, std::size_t>> dropped;  // (dropped, by)
};

GreedyResult greedy_dedup(const std::vector<Detection>& d, double iou_threshold) {
    std::vector<Entry> e(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) e[i] = {i, d[i].mask.count(), d[i].mask.foreground_bounds()};
    std::stable_sort(e.begin(), e.end(), [&](const Entry& a, const Entry& b) {
        const Detection &da = d[a.index], &db = d[b.index];
        if (da.confidence != db.confidence) return da.confidence > db.confidence;
        if (a.area != b.area) return a.area > b.area;
        if (da.box.x0 != db.box.x0) return da.box.x0 < db.box.x0;
        return da.box.y0 < db.box.y0;
    });
    GreedyResult r;
    std::vector<const Entry*> kept;
    for (const Entry& c : e) {
        const Entry* by = nullptr;
        for (const Entry* k : kept) {
            if (d[k->index].object_class != d[c.index].object_class) continue;
            if (!overlaps(k->bounds, c.bounds)) continue;
            const std::int64_t inter = intersection_count(d[k->index].mask, d[c.index].mask);
            const std::int64_t uni = k->area + c.area - inter;
            if (uni > 0 && double(inter) / double(uni) > iou_threshold) {
                by = k;
                break;
            }
        }
        if (by) {
            r.dropped.emplace_back(c.index, by->index);
        } else {
            kept.push_back(&c);
            r.kept.push_back(c.index);
        }
    }
    return r;
}

}  // namespace

TileGrid plan_tiles(int width, int height, int tile_size, int overlap) {
    if (width < 1 || height < 1) throw InvalidArgument("plan_tiles: empty image");
    if (overlap < 0) throw InvalidArgument("plan_tiles: overlap must be >= 0");
    if (tile_size <= overlap)
        throw InvalidArgument("plan_tiles: overlap " + std::to_string(overlap) +
                              " must be smaller than tile size " + std::to_string(tile_size));
    TileGrid g;
    g.image_width = width;
    g.image_height = height;
    g.tile_size = tile_size;
    g.overlap = overlap;
    const int step = tile_size - overlap;
    g.x_origins = axis_origins(width, tile_size, step);
    g.y_origins = axis_origins(height, tile_size, step);
    for (int oy : g.y_origins)
        for (int ox : g.x_origins)
            g.tiles.push_back({int(g.tiles.size()),
                               PixelRect{ox, oy, std::min(ox + tile_size, width),
                                         std::min(oy + tile_size, height)}});
    return g;
}

std::vector<Detection> dedup(std::vector<Detection> detections, double iou_threshold) {
    const GreedyResult r = greedy_dedup(detections, iou_threshold);
    std::vector<Detection> out;
    out.reserve(r.kept.size());
    for (std::size_t i : r.kept) out.push_back(std::move(detections[i]));
    return out;
}

BorderExclusion exclude_border(std::vector<Detection> detections, int width, int height, int margin) {
    if (margin < 0) throw InvalidArgument("exclude_border: margin must be >= 0");
    BorderExclusion r;
    for (auto& d : detections) {
        const PixelRect b = d.mask.foreground_bounds();
        const bool touches = b.empty() || b.x0 <= margin || b.y0 <= margin ||
                             b.x1 - 1 >= width - 1 - margin || b.y1 - 1 >= height - 1 - margin;
        if (touches)
            ++r.excluded;
        else
            r.kept.push_back(std::move(d));
    }
    return r;
}

TileDetection place_tile_detection(const Detection& local, const Tile& tile, int image_width,
                                   int image_height) {
    TileDetection t{local.translated(tile.rect.x0, tile.rect.y0), tile.index, tile.rect, false};
    const PixelRect b = t.detection.mask.foreground_bounds();
    const PixelRect& r = tile.rect;
    t.tile_cut = (r.x0 > 0 && b.x0 <= r.x0) || (r.y0 > 0 && b.y0 <= r.y0) ||
                 (r.x1 < image_width && b.x1 >= r.x1) || (r.y1 < image_height && b.y1 >= r.y1);
    return t;
}

MergedDetectionSet merge_tile_detections(std::vector<TileDetection> detections, int width,
                                         int height, const MergeOptions& options) {
    // Canonical order so the result does not depend on how tiles finished.
    std::stable_sort(detections.begin(), detections.end(), [](const TileDetection& a, const TileDetection& b) {
        if (a.tile != b.tile) return a.tile < b.tile;
        return confidence_order(a.detection, b.detection);
    });

    MergedDetectionSet out;
    std::vector<Detection> whole;
    std::vector<std::vector<int>> whole_tiles;
    std::vector<TileDetection> cut;
    for (auto& t : detections) {
        if (t.tile_cut) {
            cut.push_back(std::move(t));
        } else {
            whole.push_back(std::move(t.detection));
            whole_tiles.push_back({t.tile});
        }
    }

    std::vector<std::int64_t> whole_area(whole.size());
    std::vector<PixelRect> whole_bounds(whole.size());
    for (std::size_t i = 0; i < whole.size(); ++i) {
        whole_area[i] = whole[i].mask.count();
        whole_bounds[i] = whole[i].mask.foreground_bounds();
    }

    // A cut fragment covered by a whole detection is that detection seen
    // through a tile edge.
    std::vector<TileDetection> orphans;
    for (auto& c : cut) {
        const std::int64_t area = c.detection.mask.count();
        const PixelRect cb = c.detection.mask.foreground_bounds();
        std::size_t best = whole.size();
        double best_cover = options.dedup_iou;
        for (std::size_t i = 0; i < whole.size(); ++i) {
            if (whole[i].object_class != c.detection.object_class || !overlaps(whole_bounds[i], cb))
                continue;
            const double cover = area ? double(intersection_count(whole[i].mask, c.detection.mask)) / area : 0.0;
            if (cover > best_cover) {
                best_cover = cover;
                best = i;
            }
        }
        if (best < whole.size()) {
            add_tiles(whole_tiles[best], {c.tile});
            ++out.duplicates_removed;
        } else {
            orphans.push_back(std::move(c));
        }
    }

    // Fragments of an object too large for any single tile: two fragments
    // of one object agree wherever their tiles overlap.
    std::stable_sort(orphans.begin(), orphans.end(), [](const TileDetection& a, const TileDetection& b) {
        return confidence_order(a.detection, b.detection);
    });
    std::vector<Detection> joined;
    std::vector<std::vector<int>> joined_tiles;
    std::vector<std::vector<PixelRect>> joined_rects;
    std::vector<int> joined_parts;
    for (auto& c : orphans) {
        const PixelRect cb = c.detection.mask.foreground_bounds();
        bool merged = false;
        for (std::size_t j = 0; j < joined.size() && !merged; ++j) {
            if (joined[j].object_class != c.detection.object_class ||
                !overlaps(joined[j].mask.foreground_bounds(), cb))
                continue;
            for (const PixelRect& r : joined_rects[j]) {
                const PixelRect shared = r.intersect(c.tile_rect);
                if (shared.empty() || r == c.tile_rect) continue;
                if (restricted_iou(joined[j].mask, c.detection.mask, shared) > options.dedup_iou) {
                    merged = true;
                    break;
                }
            }
            if (!merged) continue;
            joined[j] = Detection::from_mask(
                joined[j].object_class, std::max(joined[j].confidence, c.detection.confidence),
                mask_union(joined[j].mask, c.detection.mask), box_union(joined[j].box, c.detection.box));
            add_tiles(joined_tiles[j], {c.tile});
            joined_rects[j].push_back(c.tile_rect);
            ++joined_parts[j];
        }
        if (!merged) {
            joined.push_back(std::move(c.detection));
            joined_tiles.push_back({c.tile});
            joined_rects.push_back({c.tile_rect});
            joined_parts.push_back(1);
        }
    }
    for (std::size_t j = 0; j < joined.size(); ++j) {
        out.fragments_joined += joined_parts[j] - 1;
        whole.push_back(std::move(joined[j]));
        whole_tiles.push_back(std::move(joined_tiles[j]));
    }

    const GreedyResult g = greedy_dedup(whole, options.dedup_iou);
    out.duplicates_removed += int(g.dropped.size());
    for (const auto& [dropped, by] : g.dropped) add_tiles(whole_tiles[by], whole_tiles[dropped]);

    const int margin = options.border_margin;
    if (margin < 0) throw InvalidArgument("merge: border margin must be >= 0");
    for (std::size_t i : g.kept) {
        std::vector<Detection> one;
        one.push_back(std::move(whole[i]));
        BorderExclusion b = exclude_border(std::move(one), width, height, margin);
        if (b.excluded) {
            ++out.border_excluded;
            continue;
        }
        out.detections.push_back(std::move(b.kept.front()));
        out.provenance.push_back(std::move(whole_tiles[i]));
    }
    return out;
}

TileError::TileError(int tile, PixelRect rect, const std::string& what)
    : SessionError("tile " + std::to_string(tile) + " at (" + std::to_string(rect.x0) + ", " +
                   std::to_string(rect.y0) + "): " + what),
      tile_(tile),
      rect_(rect) {}

TiledRun run_tiled(const Detector& detector, const ImageSource& source, const TileGrid& grid,
                   const TilingOptions& options) {
    if (grid.image_width != source.width() || grid.image_height != source.height())
        throw InvalidArgument("run_tiled: grid planned for " + std::to_string(grid.image_width) + "x" +
                              std::to_string(grid.image_height) + " but image is " +
                              std::to_string(source.width()) + "x" + std::to_string(source.height()));
    const auto start = std::chrono::steady_clock::now();
    const std::size_t n = grid.tiles.size();
    std::vector<std::vector<TileDetection>> per_tile(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0}, done{0};

    const auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const Tile& tile = grid.tiles[i];
            try {
                const RgbImage pixels = source.read(tile.rect);
                const auto found = options.inference ? detector.detect_with(pixels, *options.inference)
                                                     : detector.detect(pixels);
                for (const Detection& d : found)
                    per_tile[i].push_back(place_tile_detection(d, tile, grid.image_width, grid.image_height));
            } catch (...) {
                errors[i] = std::current_exception();
            }
            const std::size_t k = ++done;
            if (options.progress) options.progress(k, n);
        }
    };
    int workers = options.workers > 0 ? options.workers : int(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, int(std::max<std::size_t>(n, 1)));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            throw TileError(int(i), grid.tiles[i].rect, e.what());
        } catch (...) {
            throw TileError(int(i), grid.tiles[i].rect, "unknown error");
        }
    }

    std::vector<TileDetection> all;
    for (auto& v : per_tile)
        for (auto& t : v) all.push_back(std::move(t));
    TiledRun run;
    run.merged = merge_tile_detections(std::move(all), grid.image_width, grid.image_height, options.merge);
    run.tiles = n;
    run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return run;
}

int longest_extent(const std::vector<Detection>& detections) {
    int m = 0;
    for (const auto& d : detections) {
        const PixelRect b = d.mask.foreground_bounds();
        m = std::max({m, b.width(), b.height()});
    }
    return m;
}

}  // namespace fiberscope
