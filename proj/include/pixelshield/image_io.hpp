#pragma once

#include <string>

#include "pixelshield/mask.hpp"
#include "pixelshield/tensor.hpp"

namespace pxs {

// Images travel as binary PGM (P5) for C=1 and PPM (P6) for C=3, 8-bit,
// linearly mapped to [0,1] (v/255). Masks are PGM with 0 = outside and
// 255 = inside; the loader maps >127 to 1.

void save_image(const std::string& path, const Tensor& img);  // img [C,H,W], C in {1,3}
Tensor load_image(const std::string& path);

void save_mask(const std::string& path, const BinaryMask& mask);
BinaryMask load_mask(const std::string& path);

}  // namespace pxs
