#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace fiberscope {

// Image frame: x rightward, y downward, origin at the top-left corner of the
// top-left pixel. Pixel (i, j) covers [i, i+1) x [j, j+1); its center is
// (i + 0.5, j + 0.5).

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

/// Integer pixel rectangle, half-open: [x0, x1) x [y0, y1).
struct PixelRect {
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    std::int64_t area() const { return empty() ? 0 : std::int64_t(width()) * height(); }
    PixelRect intersect(const PixelRect& o) const;

    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

struct BoundingBox {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    bool valid() const { return x0 < x1 && y0 < y1; }
    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return valid() ? width() * height() : 0.0; }
    BoundingBox dilated(double by) const { return {x0 - by, y0 - by, x1 + by, y1 + by}; }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Simple closed outline. Vertices are normalized to positive signed area
/// (clockwise on screen), so callers may supply either winding.
class Polygon {
public:
    /// Throws EmptyGeometryError for fewer than 3 vertices or zero area.
    explicit Polygon(std::vector<Point> vertices);

    /// Same as the constructor but returns nullopt instead of throwing.
    static std::optional<Polygon> try_make(std::vector<Point> vertices);

    const std::vector<Point>& vertices() const { return vertices_; }
    std::size_t size() const { return vertices_.size(); }

    double area() const;
    double perimeter() const;
    BoundingBox bounds() const;
    /// Even-odd test.
    bool contains(Point p) const;

    Polygon translated(double dx, double dy) const;

    friend bool operator==(const Polygon&, const Polygon&) = default;

private:
    struct Unchecked {};
    Polygon(std::vector<Point> vertices, Unchecked) : vertices_(std::move(vertices)) {}

    std::vector<Point> vertices_;
};

/// Shoelace sum, positive for clockwise-on-screen outlines.
double signed_area(std::span<const Point> vertices);

class BinaryMask {
public:
    /// Throws InvalidArgument unless width, height >= 1.
    BinaryMask(int width, int height);
    BinaryMask(int width, int height, std::vector<std::uint8_t> bits);

    int width() const { return width_; }
    int height() const { return height_; }

    bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
    void set(int x, int y, bool value = true) { bits_[index(x, y)] = value ? 1 : 0; }
    /// Out-of-range coordinates read as background.
    bool get_or_false(int x, int y) const {
        return x >= 0 && y >= 0 && x < width_ && y < height_ && at(x, y);
    }

    std::int64_t count() const;
    bool empty() const { return count() == 0; }
    /// Tight pixel bounds of the foreground; empty rect when there is none.
    PixelRect foreground_bounds() const;

    const std::vector<std::uint8_t>& bits() const { return bits_; }
    std::uint8_t* row(int y) { return bits_.data() + std::size_t(y) * width_; }
    const std::uint8_t* row(int y) const { return bits_.data() + std::size_t(y) * width_; }

    BinaryMask crop(const PixelRect& rect) const;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

private:
    std::size_t index(int x, int y) const { return std::size_t(y) * width_ + x; }

    int width_;
    int height_;
    std::vector<std::uint8_t> bits_;
};

/// A mask stored only over its own window of a larger canvas. Large images
/// carry per-object masks this way; pixel (x, y) of the canvas is foreground
/// iff it lies in the window and the local bit is set.
struct PlacedMask {
    int x = 0;
    int y = 0;
    BinaryMask local{1, 1};

    PixelRect window() const { return {x, y, x + local.width(), y + local.height()}; }
    bool at(int gx, int gy) const { return local.get_or_false(gx - x, gy - y); }
    std::int64_t count() const { return local.count(); }
    /// Canvas-frame foreground bounds.
    PixelRect foreground_bounds() const;
    /// Shrinks the window to the foreground bounds. Empty masks become 1x1.
    PlacedMask trimmed() const;
    PlacedMask translated(int dx, int dy) const { return {x + dx, y + dy, local}; }
    /// Expands to a full canvas of the given size, clipping anything outside.
    BinaryMask to_canvas(int width, int height) const;

    static PlacedMask from_canvas(const BinaryMask& canvas);

    friend bool operator==(const PlacedMask&, const PlacedMask&) = default;
};

/// Foreground iff the pixel center lies inside the polygon (even-odd).
/// Parts outside the canvas are clipped.
BinaryMask rasterize(const Polygon& polygon, int width, int height);

/// Rasterizes only over the polygon's footprint clipped to `clip`.
/// Returns nullopt when the footprint misses the clip rect or no pixel center is inside.
std::optional<PlacedMask> rasterize_placed(const Polygon& polygon, const PixelRect& clip);

/// |a ∩ b| / |a ∪ b|, 0 for an empty union. Throws DimensionMismatchError.
double mask_iou(const BinaryMask& a, const BinaryMask& b);
double mask_iou(const PlacedMask& a, const PlacedMask& b);
std::int64_t intersection_count(const PlacedMask& a, const PlacedMask& b);

double box_iou(const BoundingBox& a, const BoundingBox& b);

/// Absolute shoelace area.
double polygon_area(const Polygon& polygon);

/// Outer pixel-edge boundary of the largest 8-connected component. Vertices
/// sit on pixel corners and collinear runs are merged, so a filled w x h
/// rectangle yields its 4 corners and the enclosed area equals the
/// component's pixel count when it has no holes.
/// Throws EmptyGeometryError on an empty mask.
Polygon extract_contour(const BinaryMask& mask);

/// Largest 8-connected component (ties: first in raster order). Empty input
/// gives an empty mask of the same size.
BinaryMask largest_component(const BinaryMask& mask);

/// Douglas-Peucker decimation of a closed outline with the given tolerance.
std::vector<Point> simplify_outline(const std::vector<Point>& outline, double tolerance);

}  // namespace fiberscope
