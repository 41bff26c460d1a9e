#pragma once

#include <string>

#include "uspg/tensor.hpp"

namespace uspg {

/// "TSR1" container: u32 rank, u32 dims, little-endian float32 payload.
void write_tsr(const std::string& path, const Tensor& t);
Tensor read_tsr(const std::string& path);

/// 8-bit binary PGM (P5) preview; value = round(255*clamp(x,0,1)).
void write_pgm(const std::string& path, const Tensor& image);

}  // namespace uspg
