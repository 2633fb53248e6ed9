#pragma once

// Image fidelity metrics on NCHW tensors with values in [0, 1].
//
// y mode converts RGB to full-range BT.601 luma (0.299 R + 0.587 G + 0.114 B)
// before comparing. PSNR of identical images is reported as kPsnrCap.
// SSIM uses an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
// dynamic range 1, evaluated over valid window positions only and averaged
// over positions, channels and images.

#include <algorithm>
#include <cmath>
#include <vector>

#include "plainusr/error.hpp"
#include "plainusr/tensor.hpp"

namespace plainusr {

enum class ColorMode { rgb, y };

inline constexpr double kPsnrCap = 100.0;

namespace detail {

template <class T>
void check_pair(const Tensor4<T>& a, const Tensor4<T>& b, ColorMode mode) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("metric: shapes differ (" + a.shape().str() + " vs " + b.shape().str() + ")");
  if (mode == ColorMode::y && a.shape().c != 3) throw ShapeError("metric: y mode needs 3-channel RGB input");
}

// Per-image planes in double: one per channel (rgb) or a single luma plane.
template <class T>
std::vector<std::vector<double>> planes(const Tensor4<T>& x, ColorMode mode) {
  const Shape4 s = x.shape();
  std::vector<std::vector<double>> out;
  for (std::size_t n = 0; n < s.n; ++n) {
    if (mode == ColorMode::y) {
      std::vector<double> p(s.plane());
      for (std::size_t i = 0; i < s.h; ++i)
        for (std::size_t j = 0; j < s.w; ++j)
          p[i * s.w + j] = 0.299 * double(x(n, 0, i, j)) + 0.587 * double(x(n, 1, i, j)) +
                           0.114 * double(x(n, 2, i, j));
      out.push_back(std::move(p));
    } else {
      for (std::size_t c = 0; c < s.c; ++c) {
        std::vector<double> p(s.plane());
        for (std::size_t i = 0; i < s.h; ++i)
          for (std::size_t j = 0; j < s.w; ++j) p[i * s.w + j] = double(x(n, c, i, j));
        out.push_back(std::move(p));
      }
    }
  }
  return out;
}

inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> g(size);
  const double mid = double(size / 2);
  double sum = 0;
  for (std::size_t i = 0; i < size; ++i) {
    g[i] = std::exp(-(double(i) - mid) * (double(i) - mid) / (2 * sigma * sigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid separable filtering of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double>& p, std::size_t h, std::size_t w,
                                        const std::vector<double>& g) {
  const std::size_t k = g.size(), oh = h - k + 1, ow = w - k + 1;
  std::vector<double> rows(h * ow);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += g[t] * p[i * w + j + t];
      rows[i * ow + j] = acc;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += g[t] * rows[(i + t) * ow + j];
      out[i * ow + j] = acc;
    }
  return out;
}

}  // namespace detail

template <class T>
double mse(const Tensor4<T>& a, const Tensor4<T>& b, ColorMode mode = ColorMode::rgb) {
  detail::check_pair(a, b, mode);
  const auto pa = detail::planes(a, mode), pb = detail::planes(b, mode);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pa.size(); ++p)
    for (std::size_t i = 0; i < pa[p].size(); ++i) {
      const double d = pa[p][i] - pb[p][i];
      sum += d * d;
      ++count;
    }
  if (count == 0) throw ShapeError("metric: empty images");
  return sum / double(count);
}

template <class T>
double psnr(const Tensor4<T>& a, const Tensor4<T>& b, ColorMode mode = ColorMode::rgb) {
  const double e = mse(a, b, mode);
  if (e == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / e));
}

template <class T>
double ssim(const Tensor4<T>& a, const Tensor4<T>& b, ColorMode mode = ColorMode::rgb) {
  detail::check_pair(a, b, mode);
  constexpr std::size_t win = 11;
  const std::size_t h = a.shape().h, w = a.shape().w;
  if (h < win || w < win)
    throw ShapeError("ssim: images must be at least 11x11, got " + std::to_string(h) + "x" + std::to_string(w));
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = detail::gaussian_window(win, 1.5);
  const auto pa = detail::planes(a, mode), pb = detail::planes(b, mode);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < pa.size(); ++p) {
    const auto& x = pa[p];
    const auto& y = pb[p];
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
    const auto sxx = detail::filter_valid(xx, h, w, g), syy = detail::filter_valid(yy, h, w, g),
               sxy = detail::filter_valid(xy, h, w, g);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / double(count);
}

}  // namespace plainusr
