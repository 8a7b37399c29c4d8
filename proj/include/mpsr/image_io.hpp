#pragma once

#include <filesystem>

#include "mpsr/tensor.hpp"

namespace mpsr {

/// 8-bit PNG -> [1, 3, h, w] in [0, 1]. Gray and alpha inputs are converted.
Tensor read_png(const std::filesystem::path& path);

/// Writes item 0 of an RGB tensor, clamped to [0, 1] and rounded to 8 bits.
void write_png(const std::filesystem::path& path, const Tensor& image);

} // namespace mpsr
