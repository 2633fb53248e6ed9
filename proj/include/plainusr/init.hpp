#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "plainusr/lia.hpp"
#include "plainusr/reparam.hpp"
#include "plainusr/tensor.hpp"

namespace plainusr {

// Seeded generator with a platform-independent mapping to reals (the
// distributions in <random> are not bit-stable across standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  template <class T>
  void fill_uniform(std::span<T> out, double lo, double hi) {
    for (auto& v : out) v = static_cast<T>(uniform(lo, hi));
  }

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

template <class T>
Tensor4<T> random_tensor(Shape4 shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor4<T> t(shape);
  rng.fill_uniform(t.data(), lo, hi);
  return t;
}

// Uniform(-g/sqrt(fan_in), g/sqrt(fan_in)) for kernel and bias.
template <class T>
void init_conv(ConvParams<T>& conv, Rng& rng, double gain = 1.0) {
  const double fan_in = static_cast<double>(conv.kernel.shape().c * conv.k_h() * conv.k_w());
  const double bound = gain / std::sqrt(fan_in);
  rng.fill_uniform(conv.kernel.data(), -bound, bound);
  rng.fill_uniform(std::span<T>(conv.bias), -bound, bound);
}

// Training start point: trainable K2 branch near zero, s = 1, v = 0, so the
// block starts close to K3 K1 x + x.
template <class T>
void init_repmbconv_training(RepMBConvParams<T>& p, Rng& rng) {
  init_conv(p.k1, rng);
  init_conv(p.k2, rng, 1e-2);
  init_conv(p.k3, rng);
  std::fill(p.s.begin(), p.s.end(), T(1));
  std::fill(p.v.begin(), p.v.end(), T(0));
  rng.fill_uniform(std::span<T>(p.se_w1.data), -1.0 / std::sqrt(double(p.se_w1.cols)),
                   1.0 / std::sqrt(double(p.se_w1.cols)));
  rng.fill_uniform(std::span<T>(p.se_w2.data), -1.0 / std::sqrt(double(p.se_w2.cols)),
                   1.0 / std::sqrt(double(p.se_w2.cols)));
}

// Every learnable group drawn at full scale; used to fuzz fusion.
template <class T>
void init_repmbconv_random(RepMBConvParams<T>& p, Rng& rng) {
  init_conv(p.k1, rng);
  init_conv(p.k2, rng);
  init_conv(p.k3, rng);
  rng.fill_uniform(std::span<T>(p.s), 0.5, 1.5);
  rng.fill_uniform(std::span<T>(p.v), -1.0, 1.0);
  rng.fill_uniform(std::span<T>(p.se_w1.data), -1.0, 1.0);
  rng.fill_uniform(std::span<T>(p.se_w2.data), -1.0, 1.0);
}

template <class T>
void init_lia(LIAParams<T>& p, Rng& rng) {
  init_conv(p.conv_a, rng);
  init_conv(p.conv_b, rng);
}

}  // namespace plainusr
