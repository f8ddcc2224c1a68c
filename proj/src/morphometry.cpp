#include "fiberscope/morphometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>

#include "fiberscope/detection.hpp"
#include "fiberscope/error.hpp"

namespace fiberscope {

void CalibrationConfig::validate() const {
    if (!(microns_per_pixel > 0.0) || !std::isfinite(microns_per_pixel))
        throw InvalidArgument("microns_per_pixel must be strictly positive");
}

namespace {

using Pixel = Skeleton::Pixel;

// Dense byte grid with a one-pixel background frame so neighbor reads never
// need bounds checks.
struct Grid {
    int w = 0, h = 0;
    int ox = 0, oy = 0;  // source coordinates of grid cell (1, 1)
    std::vector<std::uint8_t> v;

    std::uint8_t& at(int x, int y) { return v[std::size_t(y) * w + x]; }
    std::uint8_t at(int x, int y) const { return v[std::size_t(y) * w + x]; }

    // Neighbors P2..P9, clockwise from north.
    std::array<std::uint8_t, 8> ring(int x, int y) const {
        return {at(x, y - 1),     at(x + 1, y - 1), at(x + 1, y),     at(x + 1, y + 1),
                at(x, y + 1),     at(x - 1, y + 1), at(x - 1, y),     at(x - 1, y - 1)};
    }
};

Grid grid_from_mask(const BinaryMask& mask, const PixelRect& r) {
    Grid g;
    g.w = r.width() + 2;
    g.h = r.height() + 2;
    g.ox = r.x0;
    g.oy = r.y0;
    g.v.assign(std::size_t(g.w) * g.h, 0);
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            if (mask.at(x, y)) g.at(x - r.x0 + 1, y - r.y0 + 1) = 1;
    return g;
}

int transitions(const std::array<std::uint8_t, 8>& p) {
    int a = 0;
    for (int i = 0; i < 8; ++i)
        if (!p[i] && p[(i + 1) % 8]) ++a;
    return a;
}

int neighbor_count(const std::array<std::uint8_t, 8>& p) {
    return p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
}

// Simple point for 8-connected foreground / 4-connected background: the
// foreground neighbors form one 8-connected group inside the ring, and at
// least one 4-neighbor is background.
bool is_simple(const std::array<std::uint8_t, 8>& p) {
    if (p[0] && p[2] && p[4] && p[6]) return false;
    // Ring positions 0,2,4,6 are 4-neighbors; corners connect to ring
    // neighbors on either side.
    std::array<int, 8> comp{};
    comp.fill(-1);
    int groups = 0;
    for (int start = 0; start < 8; ++start) {
        if (!p[start] || comp[start] >= 0) continue;
        std::array<int, 8> stack{};
        int top = 0;
        stack[top++] = start;
        comp[start] = groups;
        while (top) {
            const int i = stack[--top];
            // Adjacent ring cells are 8-adjacent; corners (odd) also touch
            // the 4-neighbors two steps away only through the ring.
            for (int step : {1, 7}) {
                const int j = (i + step) % 8;
                if (p[j] && comp[j] < 0) {
                    comp[j] = groups;
                    stack[top++] = j;
                }
            }
            if (i % 2 == 0) {
                // Two 4-neighbors at ring distance 2 (e.g. N and E) are
                // diagonal to each other.
                for (int step : {2, 6}) {
                    const int j = (i + step) % 8;
                    if (p[j] && comp[j] < 0) {
                        comp[j] = groups;
                        stack[top++] = j;
                    }
                }
            }
        }
        ++groups;
    }
    return groups == 1;
}

bool has_perpendicular_pair(const std::array<std::uint8_t, 8>& p) {
    return (p[0] && p[2]) || (p[2] && p[4]) || (p[4] && p[6]) || (p[6] && p[0]);
}

void zhang_suen(Grid& g) {
    std::vector<std::pair<int, int>> live;
    for (int y = 1; y < g.h - 1; ++y)
        for (int x = 1; x < g.w - 1; ++x)
            if (g.at(x, y)) live.emplace_back(x, y);

    std::vector<std::pair<int, int>> doomed;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            doomed.clear();
            for (auto [x, y] : live) {
                const auto p = g.ring(x, y);
                const int b = neighbor_count(p);
                if (b < 3 || b > 6 || transitions(p) != 1) continue;
                // p[0]=P2 (N), p[2]=P4 (E), p[4]=P6 (S), p[6]=P8 (W)
                if (pass == 0) {
                    if (p[0] && p[2] && p[4]) continue;
                    if (p[2] && p[4] && p[6]) continue;
                } else {
                    if (p[0] && p[2] && p[6]) continue;
                    if (p[0] && p[4] && p[6]) continue;
                }
                doomed.emplace_back(x, y);
            }
            if (doomed.empty()) continue;
            if (doomed.size() == live.size()) {
                // Peeling would erase the object (2x2 blocks do this); stop
                // and let the cleanup pass reduce what remains.
                return;
            }
            for (auto [x, y] : doomed) g.at(x, y) = 0;
            changed = true;
            std::erase_if(live, [&](const auto& q) { return !g.at(q.first, q.second); });
        }
    }
}

void remove_staircases(Grid& g) {
    bool changed = true;
    while (changed) {
        changed = false;
        for (int y = 1; y < g.h - 1; ++y) {
            for (int x = 1; x < g.w - 1; ++x) {
                if (!g.at(x, y)) continue;
                const auto p = g.ring(x, y);
                if (neighbor_count(p) < 2 || !has_perpendicular_pair(p) || !is_simple(p)) continue;
                g.at(x, y) = 0;
                changed = true;
            }
        }
    }
    // Crossings of even-width arms can leave 2x2 blocks in which no pixel is
    // simple; break them at the least-connected pixel.
    changed = true;
    while (changed) {
        changed = false;
        for (int y = 1; y < g.h - 2 && !changed; ++y) {
            for (int x = 1; x < g.w - 2 && !changed; ++x) {
                if (!(g.at(x, y) && g.at(x + 1, y) && g.at(x, y + 1) && g.at(x + 1, y + 1))) continue;
                std::array<std::pair<int, int>, 4> cells{
                    {{x, y}, {x + 1, y}, {x, y + 1}, {x + 1, y + 1}}};
                auto best = cells[0];
                int best_n = 9;
                for (auto c : cells) {
                    const int n = neighbor_count(g.ring(c.first, c.second));
                    if (n < best_n) {
                        best_n = n;
                        best = c;
                    }
                }
                g.at(best.first, best.second) = 0;
                changed = true;
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<int> Skeleton::endpoints() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(pixels.size()); ++i)
        if (adjacency[i].size() <= 1) out.push_back(i);
    return out;
}

Skeleton make_skeleton(std::vector<Pixel> pixels) {
    std::sort(pixels.begin(), pixels.end());
    pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
    Skeleton s;
    s.pixels = std::move(pixels);
    s.adjacency.assign(s.pixels.size(), {});
    if (s.pixels.empty()) return s;

    int x0 = s.pixels[0].x, x1 = x0, y0 = s.pixels.front().y, y1 = s.pixels.back().y;
    for (const auto& p : s.pixels) {
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
    }
    const int w = x1 - x0 + 3, h = y1 - y0 + 3;
    std::vector<int> index(std::size_t(w) * h, -1);
    const auto idx = [&](int x, int y) -> int& { return index[std::size_t(y - y0 + 1) * w + (x - x0 + 1)]; };
    for (int i = 0; i < static_cast<int>(s.pixels.size()); ++i) idx(s.pixels[i].x, s.pixels[i].y) = i;

    for (int i = 0; i < static_cast<int>(s.pixels.size()); ++i) {
        const auto [x, y] = s.pixels[i];
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                if (!dx && !dy) continue;
                const int j = idx(x + dx, y + dy);
                if (j < 0) continue;
                if (dx && dy && (idx(x + dx, y) >= 0 || idx(x, y + dy) >= 0)) continue;
                s.adjacency[i].push_back(j);
            }
        }
    }
    return s;
}

Skeleton thin(const BinaryMask& mask) {
    const BinaryMask comp = largest_component(mask);
    const PixelRect r = comp.foreground_bounds();
    if (r.empty()) throw EmptyGeometryError("thin: mask has no foreground");

    Grid g = grid_from_mask(comp, r);
    zhang_suen(g);
    remove_staircases(g);

    std::vector<Pixel> pixels;
    for (int y = 1; y < g.h - 1; ++y)
        for (int x = 1; x < g.w - 1; ++x)
            if (g.at(x, y)) pixels.push_back({x - 1 + g.ox, y - 1 + g.oy});

    // A residue that fits in a 2x2 block is a blob's center, not a curve:
    // keep the one pixel nearest the centroid.
    int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
    for (auto p : pixels) {
        x0 = std::min(x0, p.x);
        y0 = std::min(y0, p.y);
        x1 = std::max(x1, p.x);
        y1 = std::max(y1, p.y);
    }
    if (pixels.empty() || (pixels.size() > 1 && x1 - x0 <= 1 && y1 - y0 <= 1)) {
        double cx = 0, cy = 0;
        std::int64_t n = 0;
        for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x)
                if (comp.at(x, y)) {
                    cx += x;
                    cy += y;
                    ++n;
                }
        cx /= double(n);
        cy /= double(n);
        Pixel best{r.x0, r.y0};
        double bd = std::numeric_limits<double>::max();
        const auto consider = [&](int x, int y) {
            if (std::hypot(x - cx, y - cy) < bd) {
                bd = std::hypot(x - cx, y - cy);
                best = {x, y};
            }
        };
        if (pixels.empty()) {
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x)
                    if (comp.at(x, y)) consider(x, y);
        } else {
            for (auto p : pixels) consider(p.x, p.y);
        }
        pixels = {best};
    }
    return make_skeleton(std::move(pixels));
}

namespace {

// Removes terminal branches for which `drop(nodes, junction)` holds, never
// taking a junction below two remaining branches. Shortest go first.
template <typename Drop>
Skeleton prune_terminal(const Skeleton& skeleton, Drop drop) {
    if (skeleton.pixels.size() < 3) return skeleton;
    const auto& adj = skeleton.adjacency;

    struct Branch {
        int junction;
        std::vector<int> nodes;
    };
    std::vector<Branch> branches;
    for (int e : skeleton.endpoints()) {
        if (adj[e].size() != 1) continue;
        std::vector<int> nodes{e};
        int prev = e, cur = adj[e][0];
        bool reached_junction = false;
        while (true) {
            if (adj[cur].size() >= 3) {
                reached_junction = true;
                break;
            }
            if (adj[cur].size() <= 1) break;
            nodes.push_back(cur);
            const int next = adj[cur][0] == prev ? adj[cur][1] : adj[cur][0];
            prev = cur;
            cur = next;
        }
        if (reached_junction) branches.push_back({cur, std::move(nodes)});
    }
    if (branches.empty()) return skeleton;

    std::vector<bool> removed(skeleton.pixels.size(), false);
    std::sort(branches.begin(), branches.end(), [](const Branch& a, const Branch& b) {
        if (a.junction != b.junction) return a.junction < b.junction;
        if (a.nodes.size() != b.nodes.size()) return a.nodes.size() < b.nodes.size();
        return a.nodes.front() < b.nodes.front();
    });
    bool any = false;
    for (std::size_t i = 0; i < branches.size();) {
        std::size_t j = i;
        while (j < branches.size() && branches[j].junction == branches[i].junction) ++j;
        int removable = static_cast<int>(adj[branches[i].junction].size()) - 2;
        for (std::size_t k = i; k < j && removable > 0; ++k) {
            if (!drop(branches[k].nodes, branches[k].junction)) break;
            for (int n : branches[k].nodes) removed[n] = true;
            --removable;
            any = true;
        }
        i = j;
    }
    if (!any) return skeleton;

    std::vector<Pixel> kept;
    for (std::size_t i = 0; i < skeleton.pixels.size(); ++i)
        if (!removed[i]) kept.push_back(skeleton.pixels[i]);
    return make_skeleton(std::move(kept));
}

}  // namespace

Skeleton prune_spurs(const Skeleton& skeleton, int min_length) {
    if (min_length <= 1) return skeleton;
    return prune_terminal(skeleton, [&](const std::vector<int>& nodes, int) {
        return static_cast<int>(nodes.size()) < min_length;
    });
}

namespace {

// Distances from `source` along the graph; unreachable nodes stay infinite.
struct Sweep {
    std::vector<double> dist;
    std::vector<int> parent;
};

Sweep shortest_paths(const Skeleton& s, int source, LengthMode mode) {
    const double inf = std::numeric_limits<double>::infinity();
    Sweep out{std::vector<double>(s.pixels.size(), inf), std::vector<int>(s.pixels.size(), -1)};
    auto& dist = out.dist;
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[source] = 0.0;
    pq.push({0.0, source});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        for (int v : s.adjacency[u]) {
            const bool diagonal = s.pixels[u].x != s.pixels[v].x && s.pixels[u].y != s.pixels[v].y;
            const double w = (mode == LengthMode::Euclidean && diagonal) ? std::sqrt(2.0) : 1.0;
            if (d + w < dist[v]) {
                dist[v] = d + w;
                out.parent[v] = u;
                pq.push({dist[v], v});
            }
        }
    }
    return out;
}

int farthest(const std::vector<double>& dist) {
    int best = -1;
    for (int i = 0; i < static_cast<int>(dist.size()); ++i)
        if (std::isfinite(dist[i]) && (best < 0 || dist[i] > dist[best])) best = i;
    return best;
}

constexpr int kChordStep = 8;

double chord_length(const Skeleton& s, const std::vector<int>& nodes) {
    if (nodes.size() < 2) return 0.0;
    const auto dist = [&](int a, int b) {
        return std::hypot(double(s.pixels[a].x - s.pixels[b].x), double(s.pixels[a].y - s.pixels[b].y));
    };
    // Evenly spaced samples, always including both ends.
    const std::size_t n = nodes.size() - 1;
    const std::size_t chords = std::max<std::size_t>(1, (n + kChordStep / 2) / kChordStep);
    double total = 0.0;
    std::size_t prev = 0;
    for (std::size_t c = 1; c <= chords; ++c) {
        const std::size_t cur = c * n / chords;
        total += dist(nodes[prev], nodes[cur]);
        prev = cur;
    }
    return total;
}

}  // namespace

SkeletonPath longest_path(const Skeleton& skeleton, LengthMode mode) {
    const int n = static_cast<int>(skeleton.pixels.size());
    if (n == 0) return {};

    // Sweep starts: every endpoint (bounded), plus one node per component so
    // endpoint-free loops are still covered.
    std::vector<int> starts;
    for (int e : skeleton.endpoints()) {
        starts.push_back(e);
        if (starts.size() >= 16) break;
    }
    std::vector<bool> seen(n, false);
    for (int i = 0; i < n; ++i) {
        if (seen[i]) continue;
        const auto sweep = shortest_paths(skeleton, i, mode);
        for (int j = 0; j < n; ++j)
            if (std::isfinite(sweep.dist[j])) seen[j] = true;
        starts.push_back(i);
    }

    double best_dist = -1.0;
    SkeletonPath best;
    for (int s : starts) {
        const int u = farthest(shortest_paths(skeleton, s, mode).dist);
        const auto du = shortest_paths(skeleton, u, mode);
        const int v = farthest(du.dist);
        if (du.dist[v] <= best_dist) continue;
        best_dist = du.dist[v];
        best.first = u;
        best.last = v;
        best.nodes.clear();
        for (int k = v; k >= 0; k = du.parent[k]) best.nodes.push_back(k);
        std::reverse(best.nodes.begin(), best.nodes.end());
    }
    // Edges plus the starting pixel.
    best.length = (mode == LengthMode::Euclidean ? chord_length(skeleton, best.nodes) : best_dist) + 1.0;
    return best;
}

double skeleton_length(const Skeleton& skeleton, LengthMode mode) {
    return longest_path(skeleton, mode).length;
}

namespace {

// In-place squared Euclidean distance to the nearest zero cell of a w x h
// grid whose other cells hold a large value (Felzenszwalb-Huttenlocher lower
// envelope, columns then rows).
void squared_edt(std::vector<double>& f, int w, int h) {
    const auto pass = [](std::vector<double>& in, int n, std::size_t stride, std::size_t base,
                         std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
        int k = 0;
        v[0] = 0;
        constexpr double kInf = std::numeric_limits<double>::infinity();
        z[0] = -kInf;
        z[1] = kInf;
        const auto val = [&](int q) { return in[base + q * stride]; };
        for (int q = 1; q < n; ++q) {
            double s;
            while (true) {
                const int p = v[k];
                s = ((val(q) + double(q) * q) - (val(p) + double(p) * p)) / (2.0 * q - 2.0 * p);
                if (s <= z[k] && k > 0) {
                    --k;
                    continue;
                }
                break;
            }
            ++k;
            v[k] = q;
            z[k] = s;
            z[k + 1] = kInf;
        }
        k = 0;
        for (int q = 0; q < n; ++q) {
            while (z[k + 1] < q) ++k;
            const double dq = q - v[k];
            d[q] = dq * dq + val(v[k]);
        }
        for (int q = 0; q < n; ++q) in[base + q * stride] = d[q];
    };

    const int m = std::max(w, h);
    std::vector<double> d(m);
    std::vector<int> v(m);
    std::vector<double> z(m + 1);
    for (int x = 0; x < w; ++x) pass(f, h, std::size_t(w), std::size_t(x), d, v, z);
    for (int y = 0; y < h; ++y) pass(f, w, 1, std::size_t(y) * w, d, v, z);
}

constexpr double kFar = 1e20;

}  // namespace

std::vector<double> distance_transform(const BinaryMask& mask) {
    // Framed by one background pixel so the image border counts as background.
    const int w = mask.width() + 2, h = mask.height() + 2;
    std::vector<double> f(std::size_t(w) * h, 0.0);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            if (mask.at(x, y)) f[std::size_t(y + 1) * w + x + 1] = kFar;
    squared_edt(f, w, h);

    std::vector<double> out(std::size_t(mask.width()) * mask.height(), 0.0);
    for (int y = 0; y < mask.height(); ++y)
        for (int x = 0; x < mask.width(); ++x)
            out[std::size_t(y) * mask.width() + x] = std::sqrt(f[std::size_t(y + 1) * w + x + 1]);
    return out;
}

double width_from_distance_transform(const BinaryMask& mask) {
    const auto dt = distance_transform(mask);
    double best = 0.0;
    for (double d : dt) best = std::max(best, d);
    return 2.0 * best;
}

double estimate_width(const BinaryMask& mask, WidthMode mode) {
    if (mode == WidthMode::PixelCenters) return width_from_distance_transform(mask);
    const PixelRect r = mask.foreground_bounds();
    if (r.empty()) return 0.0;

    // Half-pixel lattice over the bounds plus a one-pixel frame. Pixel
    // (x, y) has its center at lattice (2(x - x0) + 3, 2(y - y0) + 3).
    const int w = 2 * (r.width() + 2) + 1, h = 2 * (r.height() + 2) + 1;
    const auto fg = [&](int lx, int ly) {
        // Pixel whose closure holds lattice point (lx, ly) with odd coords.
        return mask.get_or_false(r.x0 + (lx - 3) / 2, r.y0 + (ly - 3) / 2);
    };
    std::vector<double> f(std::size_t(w) * h, kFar);
    std::vector<std::pair<double, double>> seeds;  // pixel units
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) {
            if (!mask.at(x, y)) continue;
            const int cx = 2 * (x - r.x0) + 3, cy = 2 * (y - r.y0) + 3;
            for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}})
                if (!mask.get_or_false(x + dx, y + dy)) {
                    f[std::size_t(cy + dy) * w + cx + dx] = 0.0;
                    seeds.push_back({x + 0.5 + dx * 0.5, y + 0.5 + dy * 0.5});
                }
        }
    squared_edt(f, w, h);

    // Largest distance over lattice points whose surrounding pixels are all
    // foreground, i.e. points inside the object.
    double best = -1.0;
    int bx = 0, by = 0;
    for (int ly = 1; ly < h - 1; ++ly)
        for (int lx = 1; lx < w - 1; ++lx) {
            // Odd coordinates lie on a pixel center row/column, even ones on
            // an edge shared by two pixels.
            const int ex = lx % 2 == 1 ? 0 : 1, ey = ly % 2 == 1 ? 0 : 1;
            bool in = true;
            for (int ox = -ex; ox <= ex; ox += 2)
                for (int oy = -ey; oy <= ey; oy += 2) in = in && fg(lx + ox, ly + oy);
            if (in && f[std::size_t(ly) * w + lx] > best) {
                best = f[std::size_t(ly) * w + lx];
                bx = lx;
                by = ly;
            }
        }
    if (best < 0) return 1.0;

    // Local refinement of the peak against nearby boundary points.
    const double x0 = r.x0 + (bx - 2) / 2.0, y0 = r.y0 + (by - 2) / 2.0;
    const auto refine = [&](const std::vector<std::pair<double, double>>& boundary) {
        const double reach = std::sqrt(best) / 2.0 + 2.0;
        std::vector<std::pair<double, double>> near;
        for (auto q : boundary)
            if (std::hypot(q.first - x0, q.second - y0) <= reach) near.push_back(q);
        if (near.empty()) return 0.0;
        const auto clearance = [&](double x, double y) {
            if (!mask.get_or_false(int(std::floor(x)), int(std::floor(y)))) return -1.0;
            double d = std::numeric_limits<double>::infinity();
            for (auto q : near) d = std::min(d, std::hypot(q.first - x, q.second - y));
            return d;
        };
        double px = x0, py = y0, cur = clearance(px, py);
        for (double step = 0.125; step > 1e-3; step /= 2)
            for (bool moved = true; moved;) {
                moved = false;
                double nx = px, ny = py;
                for (int oy = -1; oy <= 1; ++oy)
                    for (int ox = -1; ox <= 1; ++ox) {
                        const double c = clearance(px + ox * step, py + oy * step);
                        if (c > cur + 1e-12) {
                            cur = c;
                            nx = px + ox * step;
                            ny = py + oy * step;
                            moved = true;
                        }
                    }
                px = nx;
                py = ny;
            }
        return cur;
    };

    // The same midpoints in contour order, averaged over a short window so
    // oblique staircases collapse onto the edge they sample. Averaging also
    // rounds off corners, so the larger of the two clearances wins.
    constexpr int kSmooth = 3;
    const Polygon contour = extract_contour(mask);
    const auto& v = contour.vertices();
    std::vector<std::pair<double, double>> ring;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Point a = v[i], b = v[(i + 1) % v.size()];
        const int n = int(std::lround(std::abs(b.x - a.x) + std::abs(b.y - a.y)));
        for (int k = 0; k < n; ++k) {
            const double t = (k + 0.5) / n;
            ring.push_back({a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t});
        }
    }
    const int n = int(ring.size());
    std::vector<std::pair<double, double>> smooth;
    for (int i = 0; i < n; ++i) {
        double sx = 0, sy = 0;
        for (int j = -kSmooth; j <= kSmooth; ++j) {
            const auto q = ring[((i + j) % n + n) % n];
            sx += q.first;
            sy += q.second;
        }
        smooth.push_back({sx / (2 * kSmooth + 1), sy / (2 * kSmooth + 1)});
    }
    const double radius = std::max({std::sqrt(best) / 2.0, refine(seeds), refine(smooth)});
    return std::max(1.0, 2.0 * radius);
}

void apply_calibration(MorphometryRecord& r, const CalibrationConfig& c) {
    c.validate();
    const double k = c.microns_per_pixel;
    r.length_um = r.length_px * k;
    r.width_um = r.width_px * k;
    r.area_um2 = r.area_px2 * k * k;
}

namespace {

// Distance from the center of pixel `from` along `dir` to the mask boundary.
double ray_exit(const BinaryMask& comp, const Pixel& from, double dx, double dy) {
    constexpr double kStep = 0.25;
    const double ox = from.x + 0.5, oy = from.y + 0.5;
    for (double t = kStep;; t += kStep) {
        const double x = ox + t * dx, y = oy + t * dy;
        if (!comp.get_or_false(int(std::floor(x)), int(std::floor(y)))) return t - kStep / 2;
    }
}

// Extent of the pixel centers along the major principal axis, plus one pixel.
double principal_extent(const BinaryMask& comp) {
    double sx = 0, sy = 0, n = 0;
    for (int y = 0; y < comp.height(); ++y)
        for (int x = 0; x < comp.width(); ++x)
            if (comp.at(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
    const double mx = sx / n, my = sy / n;
    double cxx = 0, cxy = 0, cyy = 0;
    for (int y = 0; y < comp.height(); ++y)
        for (int x = 0; x < comp.width(); ++x)
            if (comp.at(x, y)) {
                cxx += (x - mx) * (x - mx);
                cxy += (x - mx) * (y - my);
                cyy += (y - my) * (y - my);
            }
    const double angle = 0.5 * std::atan2(2 * cxy, cxx - cyy);
    const double ux = std::cos(angle), uy = std::sin(angle);
    double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
    for (int y = 0; y < comp.height(); ++y)
        for (int x = 0; x < comp.width(); ++x)
            if (comp.at(x, y)) {
                const double t = x * ux + y * uy;
                lo = std::min(lo, t);
                hi = std::max(hi, t);
            }
    return hi - lo + 1.0;
}

// Skeleton paths stop short of the tips and often veer into corners there.
// Trim each end by about one and a half radii, then follow the local path
// direction out to the boundary.
double tip_to_tip_length(const BinaryMask& comp, const Skeleton& skel, const SkeletonPath& path,
                         const std::vector<double>& dt) {
    const auto& nodes = path.nodes;
    const int n = static_cast<int>(nodes.size());
    const auto dt_at = [&](int node) {
        const auto& p = skel.pixels[node];
        return dt[std::size_t(p.y) * comp.width() + p.x];
    };
    std::vector<double> radii;
    for (int k : nodes) radii.push_back(dt_at(k));
    std::nth_element(radii.begin(), radii.begin() + n / 2, radii.end());
    const double radius = radii[n / 2];
    const int trim = static_cast<int>(std::ceil(1.5 * radius));
    const int span = std::max(3, static_cast<int>(std::ceil(radius)));

    const double max_radius = *std::max_element(dt.begin(), dt.end());
    if (n < 2 * (trim + span) + 2 || principal_extent(comp) < 6.0 * max_radius) {
        // Compact objects: too short relative to their width for a tangent.
        // Take the extent along the major axis instead.
        return principal_extent(comp);
    }

    const std::vector<int> inner(nodes.begin() + trim, nodes.end() - trim);
    const auto exit_from = [&](int end, int toward) {
        const auto& a = skel.pixels[nodes[end]];
        const auto& b = skel.pixels[nodes[toward]];
        const double dx = a.x - b.x, dy = a.y - b.y, len = std::hypot(dx, dy);
        return ray_exit(comp, a, dx / len, dy / len);
    };
    return chord_length(skel, inner) + exit_from(trim, trim + span) +
           exit_from(n - 1 - trim, n - 1 - trim - span);
}

MorphometryRecord measure_component(const BinaryMask& comp, double area_px2,
                                    const CalibrationConfig& calibration,
                                    const MorphometryOptions& options) {
    const auto dt = distance_transform(comp);
    const Skeleton skel = prune_spurs(thin(comp), options.min_spur_length);
    MorphometryRecord r;
    const SkeletonPath path = longest_path(skel, options.length_mode);
    r.length_px = options.extend_tips && options.length_mode == LengthMode::Euclidean
                      ? tip_to_tip_length(comp, skel, path, dt)
                      : path.length;
    r.skeleton_pixels = skeleton_length(skel, LengthMode::PixelCount);
    r.width_px = options.width_mode == WidthMode::PixelCenters
                     ? 2.0 * *std::max_element(dt.begin(), dt.end())
                     : estimate_width(comp, options.width_mode);
    r.area_px2 = area_px2;
    apply_calibration(r, calibration);
    return r;
}

}  // namespace

MorphometryRecord measure_mask(const BinaryMask& mask, const CalibrationConfig& calibration,
                               const MorphometryOptions& options) {
    calibration.validate();
    const BinaryMask comp = largest_component(mask);
    if (comp.count() < 3) throw EmptyGeometryError("mask too small to measure (< 3 pixels)");
    return measure_component(comp, polygon_area(extract_contour(comp)), calibration, options);
}

MorphometryRecord measure(const Detection& detection, const CalibrationConfig& calibration,
                          const MorphometryOptions& options) {
    calibration.validate();
    const BinaryMask comp = largest_component(detection.mask.local);
    if (comp.count() < 3) throw EmptyGeometryError("mask too small to measure (< 3 pixels)");
    MorphometryRecord r =
        measure_component(comp, polygon_area(detection.contour), calibration, options);
    r.object_class = detection.object_class;
    r.confidence = detection.confidence;
    return r;
}

}  // namespace fiberscope
