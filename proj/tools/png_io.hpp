#pragma once

// 8-bit RGB PNG I/O. Pixels map to [0, 1] as v / 255 on read; on write values
// are clamped to [0, 1], scaled by 255 and rounded half away from zero.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "plainusr/tensor.hpp"

namespace plainusr::cli {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Any PNG colour type is converted to RGB (alpha composited on black).
Tensor4<float> read_png(const std::string& path);

// Expects a 1x3xHxW tensor.
void write_png(const std::string& path, const Tensor4<float>& img);

std::uint8_t to_byte(double v);

}  // namespace plainusr::cli
