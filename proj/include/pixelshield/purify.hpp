#pragma once

#include <string>

#include "pixelshield/tensor.hpp"

namespace pxs {

// Noise-removal transforms used to probe protection resilience.

// Per 8x8 block: forward DCT-II, quantize with the standard luminance table
// scaled by the IJG quality formula, dequantize, inverse DCT. Entropy coding
// and chroma subsampling are deliberately absent; quantization is the
// operative noise-removal mechanism. Channels are processed independently.
// Non-multiple-of-8 extents are reflect-padded and cropped back.
Tensor dct_quantize_purify(const Tensor& img, int quality);

// Center crop to floor(f*H) x floor(f*W), bilinear resize back.
Tensor crop_resize_purify(const Tensor& img, double f);

struct PurifyConfig {
    std::string kind;  // "none" | "dct_quantize" | "crop_resize"
    int quality = 75;
    double crop_fraction = 0.9;
};

Tensor purify(const Tensor& img, const PurifyConfig& cfg);

}  // namespace pxs
