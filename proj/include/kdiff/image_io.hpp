#pragma once

#include <filesystem>

#include "kdiff/tensor.hpp"

namespace kdiff {

/// [-1, 1] -> [0, 255] by the affine map, clamped and rounded.
unsigned char to_byte(double v);

/// Binary P6 from an [h, w, 3] tensor.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
/// Reads a P6 file (maxval 255) back to [-1, 1].
Tensor read_ppm(const std::filesystem::path& path);

/// Binary P5 of a nonnegative 2-D map scaled so its maximum is 255.
void write_pgm(const std::filesystem::path& path, const Tensor& map);

/// One line per row, comma-separated, shortest round-trip formatting.
void write_csv(const std::filesystem::path& path, const Tensor& matrix);

}  // namespace kdiff
