#include "pixelshield/mask.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <tuple>

#include "pixelshield/rng.hpp"

namespace pxs {

std::int64_t BinaryMask::area() const {
    std::int64_t a = 0;
    for (std::uint8_t b : bits) a += b;
    return a;
}

bool BinaryMask::is_subset_of(const BinaryMask& other) const {
    if (h != other.h || w != other.w) return false;
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i] && !other.bits[i]) return false;
    return true;
}

Tensor BinaryMask::to_tensor() const { return to_tensor(1); }

Tensor BinaryMask::to_tensor(int channels) const {
    Tensor t = Tensor::zeros({channels, h, w});
    const std::size_t hw = bits.size();
    for (int c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < hw; ++i)
            t.data[static_cast<std::size_t>(c) * hw + i] = bits[i] ? 1.0f : 0.0f;
    return t;
}

BinaryMask BinaryMask::from_tensor(const Tensor& t) {
    if (t.rank() != 3 || t.shape[0] != 1) throw UsageError("mask tensor must be [1,H,W]");
    BinaryMask m(t.shape[1], t.shape[2]);
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = t.data[i] > 0.5f ? 1 : 0;
    return m;
}

BinaryMask BinaryMask::full(int h, int w) {
    BinaryMask m(h, w);
    std::fill(m.bits.begin(), m.bits.end(), std::uint8_t{1});
    return m;
}

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
    if (a.h != b.h || a.w != b.w) throw UsageError("mask_and: size mismatch");
    BinaryMask out(a.h, a.w);
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] & b.bits[i];
    return out;
}

BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
    if (a.h != b.h || a.w != b.w) throw UsageError("mask_or: size mismatch");
    BinaryMask out(a.h, a.w);
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] | b.bits[i];
    return out;
}

BinaryMask mask_not(const BinaryMask& a) {
    BinaryMask out(a.h, a.w);
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = a.bits[i] ? 0 : 1;
    return out;
}

BinaryMask dilate(const BinaryMask& m, int radius) {
    BinaryMask cur = m;
    for (int r = 0; r < radius; ++r) {
        BinaryMask next = cur;
        for (int y = 0; y < m.h; ++y)
            for (int x = 0; x < m.w; ++x) {
                if (cur.at(y, x)) continue;
                for (int dy = -1; dy <= 1 && !next.at(y, x); ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        int yy = y + dy, xx = x + dx;
                        if (cur.in_bounds(yy, xx) && cur.at(yy, xx)) {
                            next.at(y, x) = 1;
                            break;
                        }
                    }
            }
        cur = std::move(next);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Contour tracing

namespace {

// Clockwise in image coordinates (y down); positive shoelace below.
constexpr int kDx8[8] = {0, 1, 1, 1, 0, -1, -1, -1};
constexpr int kDy8[8] = {-1, -1, 0, 1, 1, 1, 0, -1};

int dir_index(int dx, int dy) {
    for (int d = 0; d < 8; ++d)
        if (kDx8[d] == dx && kDy8[d] == dy) return d;
    return -1;
}

double shoelace2(const Contour& c) {
    double a = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const auto& p = c[i];
        const auto& q = c[(i + 1) % c.size()];
        a += static_cast<double>(p.first) * q.second - static_cast<double>(q.first) * p.second;
    }
    return a;
}

Contour moore_trace(const std::vector<int>& labels, int label, int w, int h, int sy, int sx) {
    auto is_comp = [&](int y, int x) {
        return y >= 0 && y < h && x >= 0 && x < w &&
               labels[static_cast<std::size_t>(y) * w + x] == label;
    };
    Contour contour;
    contour.emplace_back(sx, sy);
    // Start pixel is topmost-leftmost, so its west neighbor is background.
    int cx = sx, cy = sy;
    int bx = sx - 1, by = sy;
    const int sbx = bx, sby = by;
    const std::int64_t max_steps = 4LL * w * h + 8;
    for (std::int64_t step = 0; step < max_steps; ++step) {
        const int bdir = dir_index(bx - cx, by - cy);
        int found = -1;
        int lastx = bx, lasty = by;
        for (int i = 1; i <= 8; ++i) {
            const int d = (bdir + i) % 8;
            const int qx = cx + kDx8[d], qy = cy + kDy8[d];
            if (is_comp(qy, qx)) {
                found = d;
                break;
            }
            lastx = qx;
            lasty = qy;
        }
        if (found < 0) return contour;  // isolated pixel
        cx += kDx8[found];
        cy += kDy8[found];
        bx = lastx;
        by = lasty;
        // Jacob's criterion: back at the start with the same backtrack state.
        if (cx == sx && cy == sy && bx == sbx && by == sby) break;
        contour.emplace_back(cx, cy);
    }
    return contour;
}

}  // namespace

std::vector<Contour> trace_contours(const BinaryMask& mask) {
    if (mask.empty()) throw UsageError("trace_contours: empty mask");
    const int h = mask.h, w = mask.w;
    std::vector<int> labels(static_cast<std::size_t>(h) * w, 0);
    int next_label = 0;
    std::vector<Contour> out;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask.at(y, x) || labels[static_cast<std::size_t>(y) * w + x]) continue;
            const int label = ++next_label;
            int min_x = x, max_x = x, min_y = y, max_y = y;
            std::deque<std::pair<int, int>> queue{{y, x}};
            labels[static_cast<std::size_t>(y) * w + x] = label;
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                min_x = std::min(min_x, cx);
                max_x = std::max(max_x, cx);
                min_y = std::min(min_y, cy);
                max_y = std::max(max_y, cy);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (mask.in_bounds(ny, nx) && mask.at(ny, nx) &&
                            !labels[static_cast<std::size_t>(ny) * w + nx]) {
                            labels[static_cast<std::size_t>(ny) * w + nx] = label;
                            queue.emplace_back(ny, nx);
                        }
                    }
            }
            if (max_x - min_x < 2 || max_y - min_y < 2) continue;  // smaller than 3x3
            Contour c = moore_trace(labels, label, w, h, min_y, [&] {
                for (int xx = 0; xx < w; ++xx)
                    if (labels[static_cast<std::size_t>(min_y) * w + xx] == label) return xx;
                return 0;
            }());
            if (c.size() < 3) continue;
            if (shoelace2(c) < 0.0) std::reverse(c.begin() + 1, c.end());
            out.push_back(std::move(c));
        }
    }
    return out;
}

std::vector<double> gaussian_smooth_circular(const std::vector<double>& values, double s) {
    if (s <= 0.0) throw UsageError("gaussian_smooth_circular: s must be > 0");
    const std::size_t n = values.size();
    if (n <= 1) return values;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * s)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double v = std::exp(-0.5 * (k / s) * (k / s));
        kernel[static_cast<std::size_t>(k + radius)] = v;
        norm += v;
    }
    for (double& v : kernel) v /= norm;
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
            const std::size_t j =
                static_cast<std::size_t>(((static_cast<long long>(i) + k) % static_cast<long long>(n) +
                                          static_cast<long long>(n)) %
                                         static_cast<long long>(n));
            acc += kernel[static_cast<std::size_t>(k + radius)] * values[j];
        }
        out[i] = acc;
    }
    return out;
}

BinaryMask rasterize(const Contour& contour, int h, int w) {
    if (contour.size() < 3) throw UsageError("rasterize: contour needs at least 3 points");
    for (const auto& [x, y] : contour)
        if (x < 0 || x >= w || y < 0 || y >= h)
            throw UsageError("rasterize: contour point out of bounds");
    BinaryMask out(h, w);
    const std::size_t n = contour.size();
    // Even-odd scanline fill; edges half-open in y so shared vertices count once.
    std::vector<double> xs;
    for (int y = 0; y < h; ++y) {
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = contour[i];
            const auto& q = contour[(i + 1) % n];
            const int y0 = p.second, y1 = q.second;
            if (y0 == y1) continue;
            const int ymin = std::min(y0, y1), ymax = std::max(y0, y1);
            if (y < ymin || y >= ymax) continue;
            const double t = static_cast<double>(y - y0) / (y1 - y0);
            xs.push_back(p.first + t * (q.first - p.first));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            int x0 = static_cast<int>(std::ceil(xs[i] - 1e-9));
            int x1 = static_cast<int>(std::floor(xs[i + 1] + 1e-9));
            x0 = std::max(x0, 0);
            x1 = std::min(x1, w - 1);
            for (int x = x0; x <= x1; ++x) out.at(y, x) = 1;
        }
    }
    // Boundary pixels are part of the mask.
    for (std::size_t i = 0; i < n; ++i) {
        int x0 = contour[i].first, y0 = contour[i].second;
        const int x1 = contour[(i + 1) % n].first, y1 = contour[(i + 1) % n].second;
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            out.at(y0, x0) = 1;
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Algorithm: contour-shrinking augmentation

namespace {

double auto_zeta(const Contour& c) {
    int min_x = c[0].first, max_x = c[0].first, min_y = c[0].second, max_y = c[0].second;
    for (const auto& [x, y] : c) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
    }
    const double dw = max_x - min_x + 1, dh = max_y - min_y + 1;
    return std::max(2.0, 0.08 * std::sqrt(dw * dw + dh * dh));
}

// One displacement pass over one contour; returns the displaced integer
// contour, clamped so every point stays inside m_tr.
Contour shrink_contour(const Contour& contour, const BinaryMask& m_tr, double zeta, double s,
                       Rng& rng) {
    const std::size_t n = contour.size();
    std::vector<double> x_off(n), y_off(n);
    for (std::size_t j = 0; j < n; ++j) x_off[j] = rng.uniform(-zeta, zeta);
    for (std::size_t j = 0; j < n; ++j) y_off[j] = rng.uniform(-zeta, zeta);
    x_off = gaussian_smooth_circular(x_off, s);
    y_off = gaussian_smooth_circular(y_off, s);

    std::vector<std::pair<double, double>> pts(n);
    for (std::size_t j = 0; j < n; ++j)
        pts[j] = {contour[j].first + x_off[j], contour[j].second + y_off[j]};

    for (std::size_t j = 0; j < n; ++j) {
        const int xi = static_cast<int>(std::lround(pts[j].first));
        const int yi = static_cast<int>(std::lround(pts[j].second));
        const bool inside = m_tr.in_bounds(yi, xi) && m_tr.at(yi, xi) != 0;
        if (inside) continue;
        // Replace with the closest point of the original contour (Euclidean,
        // brute force).
        double best = 1e300;
        std::size_t best_j = 0;
        for (std::size_t k = 0; k < n; ++k) {
            const double dx = pts[j].first - contour[k].first;
            const double dy = pts[j].second - contour[k].second;
            const double d2 = dx * dx + dy * dy;
            if (d2 < best) {
                best = d2;
                best_j = k;
            }
        }
        pts[j] = {static_cast<double>(contour[best_j].first),
                  static_cast<double>(contour[best_j].second)};
    }

    Contour out(n);
    for (std::size_t j = 0; j < n; ++j) {
        int xi = static_cast<int>(std::lround(pts[j].first));
        int yi = static_cast<int>(std::lround(pts[j].second));
        xi = std::min(m_tr.w - 1, std::max(0, xi));
        yi = std::min(m_tr.h - 1, std::max(0, yi));
        out[j] = {xi, yi};
    }
    return out;
}

}  // namespace

BinaryMask augment_mask(const BinaryMask& m_tr, const AugmentParams& params) {
    if (m_tr.empty()) throw UsageError("augment_mask: empty mask");
    if (params.s <= 0.0) throw UsageError("augment_mask: smoothing s must be > 0");
    if (params.iters < 1) throw UsageError("augment_mask: iters must be >= 1");
    if (params.zeta >= 0.0 && params.zeta > std::max(m_tr.h, m_tr.w))
        throw UsageError("augment_mask: zeta larger than the image");

    BinaryMask current = m_tr;
    for (int iter = 0; iter < params.iters; ++iter) {
        std::vector<Contour> contours;
        try {
            contours = trace_contours(current);
        } catch (const UsageError&) {
            break;  // shrunk to nothing traceable; keep the last mask
        }
        if (contours.empty()) break;

        BinaryMask result(m_tr.h, m_tr.w);
        bool produced = false;
        for (int attempt = 0; attempt <= 3; ++attempt) {
            result = BinaryMask(m_tr.h, m_tr.w);
            const double halving = std::pow(0.5, attempt);
            for (std::size_t k = 0; k < contours.size(); ++k) {
                const Contour& contour = contours[k];
                const double zeta =
                    (params.zeta < 0.0 ? auto_zeta(contour) : params.zeta) * halving;
                Rng rng(derive_seed(params.seed, "mask_augment", static_cast<std::uint64_t>(iter),
                                    k, static_cast<std::uint64_t>(attempt)));
                Contour shrunk = shrink_contour(contour, m_tr, zeta, params.s, rng);
                result = mask_or(result, rasterize(shrunk, m_tr.h, m_tr.w));
            }
            result = mask_and(result, m_tr);
            if (!result.empty()) {
                produced = true;
                break;
            }
        }
        if (!produced) {
            // Fall back to the undisplaced contours of the current mask.
            result = BinaryMask(m_tr.h, m_tr.w);
            for (const Contour& contour : contours)
                result = mask_or(result, rasterize(contour, m_tr.h, m_tr.w));
            result = mask_and(result, m_tr);
        }
        current = std::move(result);
    }
    return current;
}

// ---------------------------------------------------------------------------
// Benchmark mask family

namespace {

// Chessboard distance to the outside of the mask (0 outside).
std::vector<int> distance_inside(const BinaryMask& m) {
    const int h = m.h, w = m.w;
    const int big = h + w + 2;
    std::vector<int> d(static_cast<std::size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) d[static_cast<std::size_t>(y) * w + x] = m.at(y, x) ? big : 0;
    auto ref = [&](int y, int x) -> int& { return d[static_cast<std::size_t>(y) * w + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!ref(y, x)) continue;
            int best = ref(y, x);
            if (y == 0 || x == 0 || y == h - 1 || x == w - 1) best = std::min(best, 1);
            if (y > 0) {
                best = std::min(best, ref(y - 1, x) + 1);
                if (x > 0) best = std::min(best, ref(y - 1, x - 1) + 1);
                if (x < w - 1) best = std::min(best, ref(y - 1, x + 1) + 1);
            }
            if (x > 0) best = std::min(best, ref(y, x - 1) + 1);
            ref(y, x) = best;
        }
    for (int y = h - 1; y >= 0; --y)
        for (int x = w - 1; x >= 0; --x) {
            if (!ref(y, x)) continue;
            int best = ref(y, x);
            if (y < h - 1) {
                best = std::min(best, ref(y + 1, x) + 1);
                if (x > 0) best = std::min(best, ref(y + 1, x - 1) + 1);
                if (x < w - 1) best = std::min(best, ref(y + 1, x + 1) + 1);
            }
            if (x < w - 1) best = std::min(best, ref(y, x + 1) + 1);
            ref(y, x) = best;
        }
    return d;
}

void fill_disk(BinaryMask& m, double cx, double cy, double r) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(m.w - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(m.h - 1, static_cast<int>(std::ceil(cy + r)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.at(y, x) = 1;
}

}  // namespace

MaskFamily mask_family(const BinaryMask& m_gt, std::uint64_t seed) {
    if (m_gt.empty()) throw UsageError("mask_family: empty ground-truth mask");
    const int h = m_gt.h, w = m_gt.w;
    int min_x = w, max_x = -1, min_y = h, max_y = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (m_gt.at(y, x)) {
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
            }

    BinaryMask rect(h, w);
    for (int y = min_y; y <= max_y; ++y)
        for (int x = min_x; x <= max_x; ++x) rect.at(y, x) = 1;

    const double cx = 0.5 * (min_x + max_x), cy = 0.5 * (min_y + max_y);
    double r = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (m_gt.at(y, x))
                r = std::max(r, std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy)));
    BinaryMask circle(h, w);
    fill_disk(circle, cx, cy, r + 0.5);

    // Circle-brush style mask: jittered disks along the medial axis, then
    // top-up disks until at least 95% of the ground truth is covered.
    BinaryMask brush(h, w);
    {
        Rng rng(derive_seed(seed, "mask_family/brush"));
        const std::vector<int> dist = distance_inside(m_gt);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int d = dist[static_cast<std::size_t>(y) * w + x];
                if (!d) continue;
                bool local_max = true;
                for (int dy = -1; dy <= 1 && local_max; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (m_gt.in_bounds(yy, xx) &&
                            dist[static_cast<std::size_t>(yy) * w + xx] > d) {
                            local_max = false;
                            break;
                        }
                    }
                if (local_max)
                    fill_disk(brush, x, y, (d + 0.5) * rng.uniform(0.95, 1.3));
            }
        const double target = 0.95 * static_cast<double>(m_gt.area());
        while (static_cast<double>(mask_and(brush, m_gt).area()) < target) {
            bool added = false;
            for (int y = 0; y < h && !added; ++y)
                for (int x = 0; x < w; ++x)
                    if (m_gt.at(y, x) && !brush.at(y, x)) {
                        const int d = std::max(1, dist[static_cast<std::size_t>(y) * w + x]);
                        fill_disk(brush, x, y, (d + 0.5) * rng.uniform(1.0, 1.2));
                        added = true;
                        break;
                    }
            if (!added) break;
        }
    }

    MaskFamily fam;
    fam.members.emplace_back("gt", "seen", m_gt);
    fam.members.emplace_back("rect", "unseen", rect);
    fam.members.emplace_back("circle", "unseen", circle);
    fam.members.emplace_back("brush", "unseen", brush);
    fam.members.emplace_back("dilate", "unseen", dilate(m_gt, 3));
    return fam;
}

}  // namespace pxs
