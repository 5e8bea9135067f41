#pragma once

// Random hole-free blob masks shared by the geometry tests and the
// acceptance suite.

#include <deque>

#include "pixelshield/mask.hpp"
#include "pixelshield/rng.hpp"

namespace pxs_test {

// Union of 1-3 random ellipses/rectangles, holes filled, guaranteed to
// contain at least one 3x3-traceable component.
inline pxs::BinaryMask make_random_blob(int h, int w, std::uint64_t seed) {
    pxs::Rng rng(pxs::derive_seed(seed, "test_blob"));
    pxs::BinaryMask m(h, w);
    const int shapes = static_cast<int>(rng.uniform_int(1, 3));
    for (int s = 0; s < shapes; ++s) {
        const bool ellipse = rng.uniform() < 0.6;
        const double cx = rng.uniform(w * 0.2, w * 0.8);
        const double cy = rng.uniform(h * 0.2, h * 0.8);
        const double rx = rng.uniform(3.0, w * 0.3);
        const double ry = rng.uniform(3.0, h * 0.3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                const bool in = ellipse ? dx * dx + dy * dy <= 1.0
                                        : std::fabs(x - cx) <= rx && std::fabs(y - cy) <= ry;
                if (in) m.at(y, x) = 1;
            }
    }
    // Fill holes: everything not reachable from the border through the
    // complement belongs to the mask.
    pxs::BinaryMask outside(h, w);
    std::deque<std::pair<int, int>> q;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((y == 0 || y == h - 1 || x == 0 || x == w - 1) && !m.at(y, x) &&
                !outside.at(y, x)) {
                outside.at(y, x) = 1;
                q.emplace_back(y, x);
            }
    while (!q.empty()) {
        auto [cy, cx] = q.front();
        q.pop_front();
        const int dy4[4] = {1, -1, 0, 0}, dx4[4] = {0, 0, 1, -1};
        for (int d = 0; d < 4; ++d) {
            const int ny = cy + dy4[d], nx = cx + dx4[d];
            if (ny >= 0 && ny < h && nx >= 0 && nx < w && !m.at(ny, nx) && !outside.at(ny, nx)) {
                outside.at(ny, nx) = 1;
                q.emplace_back(ny, nx);
            }
        }
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (!outside.at(y, x)) m.at(y, x) = 1;
    return m;
}

}  // namespace pxs_test
