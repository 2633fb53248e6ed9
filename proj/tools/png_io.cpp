#include "png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <vector>

namespace plainusr::cli {

std::uint8_t to_byte(double v) {
  const double scaled = std::clamp(v, 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::round(scaled));  // std::round: half away from zero
}

Tensor4<float> read_png(const std::string& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw ImageError("cannot read PNG '" + path + "': " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
  const png_color black{0, 0, 0};
  if (!png_image_finish_read(&image, &black, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageError("cannot decode PNG '" + path + "': " + image.message);
  }
  const std::size_t h = image.height, w = image.width;
  Tensor4<float> out(Shape4{1, 3, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out(0, c, y, x) = float(buf[(y * w + x) * 3 + c]) / 255.0f;
  return out;
}

void write_png(const std::string& path, const Tensor4<float>& img) {
  const Shape4 s = img.shape();
  if (s.n != 1 || s.c != 3) throw ImageError("write_png expects a 1x3xHxW image, got " + s.str());
  std::vector<png_byte> buf(s.h * s.w * 3);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) buf[(y * s.w + x) * 3 + c] = to_byte(img(0, c, y, x));
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(s.w);
  image.height = static_cast<png_uint_32>(s.h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr))
    throw ImageError("cannot write PNG '" + path + "': " + image.message);
}

}  // namespace plainusr::cli
