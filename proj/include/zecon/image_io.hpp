#pragma once

#include "zecon/tensor.hpp"

#include <cstdint>
#include <filesystem>

namespace zecon {

/// 8-bit value to [-1, 1]: v / 127.5 - 1.
double byte_to_unit(std::uint8_t v);
/// [-1, 1] to 8-bit with round-half-even; values outside the range saturate.
std::uint8_t unit_to_byte(double x);

/// Reads an image as [3, H, W] RGB in [-1, 1]. Grey and alpha inputs are
/// converted to RGB. Throws on unreadable files.
Tensor read_image(const std::filesystem::path& path);
void write_image(const Tensor& image, const std::filesystem::path& path);

/// Area/bilinear resize of a [C, H, W] tensor to [C, size, size].
Tensor resize_square(const Tensor& image, std::size_t size);

/// Quantises to 8 bits and back, i.e. the value a written file would reload as.
Tensor quantize(const Tensor& image);

} // namespace zecon
