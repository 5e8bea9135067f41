#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pixelshield/tensor.hpp"

namespace pxs {

// Raster 0/1 mask. Convention everywhere: 1 = KEEP (region preserved by
// inpainting), 0 = region to be regenerated.
struct BinaryMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> bits;  // row-major, values 0/1

    BinaryMask() = default;
    BinaryMask(int h_, int w_) : h(h_), w(w_), bits(static_cast<std::size_t>(h_) * w_, 0) {}

    std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * w + x]; }
    bool in_bounds(int y, int x) const { return y >= 0 && y < h && x >= 0 && x < w; }

    std::int64_t area() const;
    bool empty() const { return area() == 0; }
    bool is_subset_of(const BinaryMask& other) const;
    bool operator==(const BinaryMask& other) const {
        return h == other.h && w == other.w && bits == other.bits;
    }

    // [1,H,W] float tensor with 0/1 values.
    Tensor to_tensor() const;
    // Replicated across channels: [C,H,W].
    Tensor to_tensor(int channels) const;
    static BinaryMask from_tensor(const Tensor& t);  // >0.5 -> 1

    static BinaryMask full(int h, int w);
};

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_not(const BinaryMask& a);
BinaryMask dilate(const BinaryMask& m, int radius);  // Chebyshev radius

// Closed polyline of integer boundary points, consecutive points
// 8-connected, consistently oriented.
using Contour = std::vector<std::pair<int, int>>;  // (x, y)

// Outer boundary of every 8-connected component (Moore-neighbor tracing,
// Jacob's stopping criterion). Components smaller than 3x3 are skipped.
// Throws UsageError on an empty mask.
std::vector<Contour> trace_contours(const BinaryMask& mask);

// Circular convolution with a discrete Gaussian (std s, truncated at 3s,
// renormalized). Length preserved.
std::vector<double> gaussian_smooth_circular(const std::vector<double>& values, double s);

// Scanline even-odd polygon fill, boundary pixels included.
BinaryMask rasterize(const Contour& contour, int h, int w);

struct AugmentParams {
    double zeta = -1.0;  // offset range; < 0 selects max(2, 0.08 * bbox diagonal)
    double s = 5.0;      // Gaussian smoothing std, contour-index units
    int iters = 3;
    std::uint64_t seed = 0;
};

// Contour-shrinking augmentation: N times, trace the current mask, displace
// the contour points by smoothed random offsets in U(-zeta, zeta), clamp
// points that leave the original mask to the nearest original contour point,
// re-rasterize. Output is a subset of the input; deterministic per seed.
BinaryMask augment_mask(const BinaryMask& m_tr, const AugmentParams& params);

// Benchmark mask family: the ground-truth mask ("seen") plus four handcrafted
// style masks covering the same region ("unseen").
struct MaskFamily {
    // (mask id, split, mask); split is "seen" or "unseen".
    std::vector<std::tuple<std::string, std::string, BinaryMask>> members;
};
MaskFamily mask_family(const BinaryMask& m_gt, std::uint64_t seed);

}  // namespace pxs
