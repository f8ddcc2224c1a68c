#include "fiberscope/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "fiberscope/error.hpp"

namespace fiberscope {

PixelRect PixelRect::intersect(const PixelRect& o) const {
    PixelRect r{std::max(x0, o.x0), std::max(y0, o.y0), std::min(x1, o.x1), std::min(y1, o.y1)};
    if (r.empty()) return {r.x0, r.y0, r.x0, r.y0};
    return r;
}

double signed_area(std::span<const Point> v) {
    if (v.size() < 3) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Point& a = v[i];
        const Point& b = v[(i + 1) % v.size()];
        sum += a.x * b.y - b.x * a.y;
    }
    return 0.5 * sum;
}

std::optional<Polygon> Polygon::try_make(std::vector<Point> vertices) {
    if (vertices.size() >= 2 && vertices.front() == vertices.back()) vertices.pop_back();
    if (vertices.size() < 3) return std::nullopt;
    const double a = signed_area(vertices);
    if (!(std::abs(a) > 0.0) || !std::isfinite(a)) return std::nullopt;
    if (a < 0) std::reverse(vertices.begin(), vertices.end());
    return Polygon(std::move(vertices), Unchecked{});
}

Polygon::Polygon(std::vector<Point> vertices) {
    auto p = try_make(std::move(vertices));
    if (!p) throw EmptyGeometryError("polygon needs at least 3 vertices and nonzero area");
    vertices_ = std::move(p->vertices_);
}

double Polygon::area() const { return std::abs(signed_area(vertices_)); }

double Polygon::perimeter() const {
    double sum = 0.0;
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
        const Point& a = vertices_[i];
        const Point& b = vertices_[(i + 1) % vertices_.size()];
        sum += std::hypot(b.x - a.x, b.y - a.y);
    }
    return sum;
}

BoundingBox Polygon::bounds() const {
    BoundingBox b{vertices_[0].x, vertices_[0].y, vertices_[0].x, vertices_[0].y};
    for (const Point& p : vertices_) {
        b.x0 = std::min(b.x0, p.x);
        b.y0 = std::min(b.y0, p.y);
        b.x1 = std::max(b.x1, p.x);
        b.y1 = std::max(b.y1, p.y);
    }
    return b;
}

bool Polygon::contains(Point p) const {
    bool inside = false;
    const std::size_t n = vertices_.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = vertices_[i];
        const Point& b = vertices_[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < x) inside = !inside;
        }
    }
    return inside;
}

Polygon Polygon::translated(double dx, double dy) const {
    std::vector<Point> out = vertices_;
    for (Point& p : out) {
        p.x += dx;
        p.y += dy;
    }
    return Polygon(std::move(out), Unchecked{});
}

// ---------------------------------------------------------------------------

BinaryMask::BinaryMask(int width, int height) : width_(width), height_(height) {
    if (width < 1 || height < 1) throw InvalidArgument("mask dimensions must be positive");
    bits_.assign(std::size_t(width) * height, 0);
}

BinaryMask::BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
    if (width < 1 || height < 1) throw InvalidArgument("mask dimensions must be positive");
    if (bits_.size() != std::size_t(width) * height)
        throw DimensionMismatchError("mask bit count does not match dimensions");
    for (auto& b : bits_) b = b ? 1 : 0;
}

std::int64_t BinaryMask::count() const {
    return std::count_if(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b != 0; });
}

PixelRect BinaryMask::foreground_bounds() const {
    int x0 = width_, y0 = height_, x1 = -1, y1 = -1;
    for (int y = 0; y < height_; ++y) {
        const std::uint8_t* r = row(y);
        for (int x = 0; x < width_; ++x) {
            if (!r[x]) continue;
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (x1 < 0) return {0, 0, 0, 0};
    return {x0, y0, x1 + 1, y1 + 1};
}

BinaryMask BinaryMask::crop(const PixelRect& rect) const {
    BinaryMask out(std::max(1, rect.width()), std::max(1, rect.height()));
    for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x)
            if (get_or_false(rect.x0 + x, rect.y0 + y)) out.set(x, y);
    return out;
}

PixelRect PlacedMask::foreground_bounds() const {
    PixelRect r = local.foreground_bounds();
    if (r.empty()) return {x, y, x, y};
    return {r.x0 + x, r.y0 + y, r.x1 + x, r.y1 + y};
}

PlacedMask PlacedMask::trimmed() const {
    PixelRect r = local.foreground_bounds();
    if (r.empty()) return {x, y, BinaryMask(1, 1)};
    return {x + r.x0, y + r.y0, local.crop(r)};
}

BinaryMask PlacedMask::to_canvas(int width, int height) const {
    BinaryMask out(width, height);
    PixelRect w = window().intersect({0, 0, width, height});
    for (int gy = w.y0; gy < w.y1; ++gy)
        for (int gx = w.x0; gx < w.x1; ++gx)
            if (local.at(gx - x, gy - y)) out.set(gx, gy);
    return out;
}

PlacedMask PlacedMask::from_canvas(const BinaryMask& canvas) {
    return PlacedMask{0, 0, canvas}.trimmed();
}

// ---------------------------------------------------------------------------

namespace {

// Calls fill(row, x_begin, x_end) for every run of pixel centers inside the
// polygon, restricted to `clip`.
template <typename Fill>
void scan_polygon(const Polygon& polygon, const PixelRect& clip, Fill&& fill) {
    const auto& v = polygon.vertices();
    const BoundingBox b = polygon.bounds();
    const int ry0 = std::max(clip.y0, static_cast<int>(std::floor(b.y0)));
    const int ry1 = std::min(clip.y1, static_cast<int>(std::ceil(b.y1)) + 1);
    std::vector<double> xs;
    xs.reserve(v.size());
    for (int j = ry0; j < ry1; ++j) {
        const double yc = j + 0.5;
        xs.clear();
        for (std::size_t i = 0, k = v.size() - 1; i < v.size(); k = i++) {
            const Point& a = v[i];
            const Point& c = v[k];
            if ((a.y > yc) != (c.y > yc)) xs.push_back(a.x + (yc - a.y) * (c.x - a.x) / (c.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            // Pixel i is inside iff xs[i] <= i + 0.5 < xs[i+1].
            const double lo = std::ceil(xs[i] - 0.5);
            const double hi = std::ceil(xs[i + 1] - 0.5);
            const int x0 = static_cast<int>(std::max<double>(lo, clip.x0));
            const int x1 = static_cast<int>(std::min<double>(hi, clip.x1));
            if (x0 < x1) fill(j, x0, x1);
        }
    }
}

}  // namespace

BinaryMask rasterize(const Polygon& polygon, int width, int height) {
    BinaryMask out(width, height);
    scan_polygon(polygon, {0, 0, width, height}, [&](int y, int x0, int x1) {
        std::fill(out.row(y) + x0, out.row(y) + x1, std::uint8_t{1});
    });
    return out;
}

std::optional<PlacedMask> rasterize_placed(const Polygon& polygon, const PixelRect& clip) {
    const BoundingBox b = polygon.bounds();
    PixelRect foot{static_cast<int>(std::floor(b.x0)), static_cast<int>(std::floor(b.y0)),
                   static_cast<int>(std::ceil(b.x1)) + 1, static_cast<int>(std::ceil(b.y1)) + 1};
    foot = foot.intersect(clip);
    if (foot.empty()) return std::nullopt;
    PlacedMask out{foot.x0, foot.y0, BinaryMask(foot.width(), foot.height())};
    bool any = false;
    scan_polygon(polygon, foot, [&](int y, int x0, int x1) {
        std::uint8_t* r = out.local.row(y - foot.y0);
        std::fill(r + (x0 - foot.x0), r + (x1 - foot.x0), std::uint8_t{1});
        any = true;
    });
    if (!any) return std::nullopt;
    return out.trimmed();
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
    if (a.width() != b.width() || a.height() != b.height())
        throw DimensionMismatchError("mask_iou: masks differ in size");
    std::int64_t inter = 0, uni = 0;
    const auto& ab = a.bits();
    const auto& bb = b.bits();
    for (std::size_t i = 0; i < ab.size(); ++i) {
        inter += (ab[i] & bb[i]);
        uni += (ab[i] | bb[i]);
    }
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

std::int64_t intersection_count(const PlacedMask& a, const PlacedMask& b) {
    const PixelRect w = a.window().intersect(b.window());
    std::int64_t inter = 0;
    for (int y = w.y0; y < w.y1; ++y) {
        const std::uint8_t* ra = a.local.row(y - a.y);
        const std::uint8_t* rb = b.local.row(y - b.y);
        for (int x = w.x0; x < w.x1; ++x) inter += (ra[x - a.x] & rb[x - b.x]);
    }
    return inter;
}

double mask_iou(const PlacedMask& a, const PlacedMask& b) {
    const std::int64_t inter = intersection_count(a, b);
    const std::int64_t uni = a.count() + b.count() - inter;
    return uni == 0 ? 0.0 : double(inter) / double(uni);
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    const double inter = (iw > 0 && ih > 0) ? iw * ih : 0.0;
    const double uni = a.area() + b.area() - inter;
    return uni > 0 ? inter / uni : 0.0;
}

double polygon_area(const Polygon& polygon) { return polygon.area(); }

// ---------------------------------------------------------------------------

namespace {

// Labels 8-connected components; returns the label image (0 = background)
// and per-label sizes (index 0 unused).
std::pair<std::vector<int>, std::vector<std::int64_t>> label_components(const BinaryMask& mask) {
    const int w = mask.width(), h = mask.height();
    std::vector<int> labels(std::size_t(w) * h, 0);
    std::vector<std::int64_t> sizes{0};
    std::vector<int> stack;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = std::size_t(y) * w + x;
            if (!mask.at(x, y) || labels[idx]) continue;
            const int label = static_cast<int>(sizes.size());
            std::int64_t size = 0;
            labels[idx] = label;
            stack.push_back(static_cast<int>(idx));
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                ++size;
                const int cx = cur % w, cy = cur / w;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t n = std::size_t(ny) * w + nx;
                        if (mask.at(nx, ny) && !labels[n]) {
                            labels[n] = label;
                            stack.push_back(static_cast<int>(n));
                        }
                    }
                }
            }
            sizes.push_back(size);
        }
    }
    return {std::move(labels), std::move(sizes)};
}

}  // namespace

BinaryMask largest_component(const BinaryMask& mask) {
    auto [labels, sizes] = label_components(mask);
    BinaryMask out(mask.width(), mask.height());
    if (sizes.size() < 2) return out;
    int best = 1;
    for (int l = 2; l < static_cast<int>(sizes.size()); ++l)
        if (sizes[l] > sizes[best]) best = l;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == best) out.set(int(i % mask.width()), int(i / mask.width()));
    return out;
}

Polygon extract_contour(const BinaryMask& mask) {
    const BinaryMask comp = largest_component(mask);
    const PixelRect b = comp.foreground_bounds();
    if (b.empty()) throw EmptyGeometryError("extract_contour: mask has no foreground");

    const auto fg = [&](int x, int y) { return comp.get_or_false(x, y); };
    // Foreground is kept on the right-hand side of travel (y down), which
    // walks the outer boundary clockwise on screen.
    static constexpr std::array<int, 4> kDx{1, 0, -1, 0};
    static constexpr std::array<int, 4> kDy{0, 1, 0, -1};
    const auto ahead = [&](int vx, int vy, int d) -> std::pair<bool, bool> {
        switch (d) {
            case 0: return {fg(vx, vy - 1), fg(vx, vy)};
            case 1: return {fg(vx, vy), fg(vx - 1, vy)};
            case 2: return {fg(vx - 1, vy), fg(vx - 1, vy - 1)};
            default: return {fg(vx - 1, vy - 1), fg(vx, vy - 1)};
        }
    };

    int sx = b.x0;
    const int sy = b.y0;
    while (!fg(sx, sy)) ++sx;

    std::vector<Point> out;
    int vx = sx, vy = sy, d = 0;
    do {
        vx += kDx[d];
        vy += kDy[d];
        const auto [left, right] = ahead(vx, vy, d);
        const int nd = left ? (d + 3) % 4 : right ? d : (d + 1) % 4;
        if (nd != d) out.push_back({double(vx), double(vy)});
        d = nd;
    } while (!(vx == sx && vy == sy && d == 0));

    return Polygon(std::move(out));
}

// ---------------------------------------------------------------------------

namespace {

double point_segment_distance(const Point& p, const Point& a, const Point& b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    if (len2 == 0.0) return std::hypot(p.x - a.x, p.y - a.y);
    const double t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

void douglas_peucker(const std::vector<Point>& pts, std::size_t first, std::size_t last,
                     double tol, std::vector<bool>& keep) {
    if (last <= first + 1) return;
    double worst = -1.0;
    std::size_t idx = first;
    for (std::size_t i = first + 1; i < last; ++i) {
        const double d = point_segment_distance(pts[i], pts[first], pts[last]);
        if (d > worst) {
            worst = d;
            idx = i;
        }
    }
    if (worst > tol) {
        keep[idx] = true;
        douglas_peucker(pts, first, idx, tol, keep);
        douglas_peucker(pts, idx, last, tol, keep);
    }
}

}  // namespace

std::vector<Point> simplify_outline(const std::vector<Point>& outline, double tolerance) {
    if (outline.size() <= 4) return outline;
    // Split the ring at vertex 0 and the vertex farthest from it.
    std::size_t far = 0;
    double best = -1.0;
    for (std::size_t i = 1; i < outline.size(); ++i) {
        const double d = std::hypot(outline[i].x - outline[0].x, outline[i].y - outline[0].y);
        if (d > best) {
            best = d;
            far = i;
        }
    }
    std::vector<Point> ring = outline;
    ring.push_back(outline[0]);
    std::vector<bool> keep(ring.size(), false);
    keep[0] = keep[far] = keep[ring.size() - 1] = true;
    douglas_peucker(ring, 0, far, tolerance, keep);
    douglas_peucker(ring, far, ring.size() - 1, tolerance, keep);
    std::vector<Point> out;
    for (std::size_t i = 0; i + 1 < ring.size(); ++i)
        if (keep[i]) out.push_back(ring[i]);
    if (out.size() < 3) return outline;
    return out;
}

}  // namespace fiberscope
