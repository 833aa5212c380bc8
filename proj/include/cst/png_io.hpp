#pragma once

#include <string>

#include "cst/tensor.hpp"

namespace cst {

// RGB8 PNG <-> CHW float tensor in [0,1]. Writing quantizes to k/255, so a
// round trip through disk is lossless for already-quantized tensors.
void write_png_rgb(const std::string& path, const Tensor3<float>& img);
Tensor3<float> read_png_rgb(const std::string& path);

}  // namespace cst
