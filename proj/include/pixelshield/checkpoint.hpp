#pragma once

#include <string>

#include "pixelshield/graph.hpp"

namespace pxs {

// DGCKPT1 tensor container, little-endian:
//   magic "DGCKPT1\0" | u32 tensor count
//   per tensor: u16 name length | name bytes (UTF-8) | u8 rank | u32 extents | f32 payload
// Round-trips bit-exactly.
void save_ckpt(const std::string& path, const ParamStore& tensors);
ParamStore load_ckpt(const std::string& path);

void save_tensor(const std::string& path, const std::string& name, const Tensor& t);
Tensor load_single_tensor(const std::string& path);

}  // namespace pxs
