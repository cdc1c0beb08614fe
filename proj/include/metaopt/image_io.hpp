#pragma once

#include <string>

#include "metaopt/tensor.hpp"

namespace metaopt {

// Binary PPM (P6, maxval 255). Images are [3,H,W] doubles in [0,1]; writing
// clamps and rounds, reading divides by 255.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& image);

}  // namespace metaopt
