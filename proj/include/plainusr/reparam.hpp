#pragma once

// Reparameterizable MBConv block.
//
// Training topology:
//   y = K3( se ⊙ K2eff( s ⊙ K1(x) ) ) + x
// where K1 is a 1x1 expansion C -> Cm, K2eff a kxk Cm -> Cm convolution with an
// optional identity branch folded in, se a learnable input-independent channel
// gate and K3 a 1x1 squeeze Cm -> C. Every stage is linear, so the whole block
// collapses into one kxk C -> C convolution (fuse()).
//
// Border handling: the 1x1 expansion runs on the zero-padded input, so the
// expanded feature carries its bias response b1 (not zeros) in the padding
// ring, and K2eff then runs unpadded. That is exactly what the fused
// convolution computes on a zero-padded input, so train and fused forms agree
// everywhere including the image border.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "plainusr/error.hpp"
#include "plainusr/ops.hpp"
#include "plainusr/tensor.hpp"

namespace plainusr {

template <class T>
struct RepMBConvParams {
  ConvParams<T> k1;  // 1x1, C -> Cm
  ConvParams<T> k2;  // kxk, Cm -> Cm, the trainable branch only
  ConvParams<T> k3;  // 1x1, Cm -> C
  bool identity_branch = true;
  std::vector<T> s;  // Cm, replaces the first nonlinearity
  std::vector<T> v;  // Cm, input of the tensor-relative SE
  Matrix<T> se_w1;   // (Cm / r) x Cm
  Matrix<T> se_w2;   // Cm x (Cm / r)

  std::size_t channels() const { return k1.c_in(); }
  std::size_t mid_channels() const { return k1.c_out(); }
  std::size_t kernel_size() const { return k2.k_h(); }

  // All weights zero, s = 1. Shapes: Cm = expansion * C, SE hidden width
  // max(1, Cm / se_reduction).
  static RepMBConvParams zeros(std::size_t c, std::size_t expansion, std::size_t k, std::size_t se_reduction = 4,
                               bool identity = true) {
    if (c == 0 || expansion == 0) throw ShapeError("RepMBConv: channels and expansion must be positive");
    if (k % 2 == 0) throw ShapeError("RepMBConv: kernel size must be odd, got " + std::to_string(k));
    if (se_reduction == 0) throw ShapeError("RepMBConv: SE reduction must be positive");
    const std::size_t cm = c * expansion;
    const std::size_t hidden = se_hidden_width(cm, se_reduction);
    RepMBConvParams p;
    p.k1 = ConvParams<T>(cm, c, 1, 1);
    p.k2 = ConvParams<T>(cm, cm, k, k, 1, k / 2);
    p.k3 = ConvParams<T>(c, cm, 1, 1);
    p.identity_branch = identity;
    p.s.assign(cm, T(1));
    p.v.assign(cm, T(0));
    p.se_w1 = Matrix<T>(hidden, cm);
    p.se_w2 = Matrix<T>(cm, hidden);
    return p;
  }

  static std::size_t se_hidden_width(std::size_t cm, std::size_t se_reduction) {
    return std::max<std::size_t>(1, cm / se_reduction);
  }

  std::size_t param_count() const {
    return k1.param_count() + k2.param_count() + k3.param_count() + s.size() + v.size() + se_w1.data.size() +
           se_w2.data.size();
  }

  void validate() const {
    k1.validate();
    k2.validate();
    k3.validate();
    const std::size_t c = channels(), cm = mid_channels(), k = kernel_size();
    if (k1.k_h() != 1 || k1.k_w() != 1 || k3.k_h() != 1 || k3.k_w() != 1)
      throw ShapeError("RepMBConv: K1 and K3 must be 1x1");
    if (k2.k_w() != k || k % 2 == 0) throw ShapeError("RepMBConv: K2 must be square with odd size");
    if (k1.groups != 1 || k2.groups != 1 || k3.groups != 1) throw ShapeError("RepMBConv: grouped convs unsupported");
    if (k1.stride != 1 || k2.stride != 1 || k3.stride != 1) throw ShapeError("RepMBConv: strides must be 1");
    if (cm % c != 0) throw ShapeError("RepMBConv: Cm must be an integer multiple of C");
    if (k2.c_in() != cm || k2.c_out() != cm || k3.c_in() != cm || k3.c_out() != c)
      throw ShapeError("RepMBConv: inconsistent channel counts");
    if (s.size() != cm || v.size() != cm) throw ShapeError("RepMBConv: s and v must have Cm entries");
    if (se_w1.cols != cm || se_w2.rows != cm || se_w2.cols != se_w1.rows || se_w1.rows == 0)
      throw ShapeError("RepMBConv: SE matrix shapes inconsistent");
  }

  friend bool operator==(const RepMBConvParams&, const RepMBConvParams&) = default;
};

// A RepMBConv block collapsed to a single convolution.
template <class T>
using FusedConv = ConvParams<T>;

// (c, c, k, k) kernel that reproduces its input: one at the spatial center of
// each diagonal (i, i) entry.
template <class T>
Tensor4<T> identity_kernel(std::size_t c, std::size_t k) {
  if (k % 2 == 0) throw ShapeError("identity_kernel: kernel size must be odd, got " + std::to_string(k));
  if (c == 0) throw ShapeError("identity_kernel: zero channels");
  Tensor4<T> id(Shape4{c, c, k, k});
  for (std::size_t i = 0; i < c; ++i) id(i, i, k / 2, k / 2) = T(1);
  return id;
}

// sigmoid(W2 relu(W1 v)). Depends on weights only, never on the block input.
template <class T>
std::vector<T> se_vector(std::span<const T> v, const Matrix<T>& w1, const Matrix<T>& w2) {
  if (w1.cols != v.size() || w2.cols != w1.rows || w2.rows != v.size())
    throw ShapeError("se_vector: weight shapes (" + std::to_string(w1.rows) + "x" + std::to_string(w1.cols) + "), (" +
                     std::to_string(w2.rows) + "x" + std::to_string(w2.cols) + ") incompatible with v of length " +
                     std::to_string(v.size()));
  std::vector<T> hidden(w1.rows);
  for (std::size_t r = 0; r < w1.rows; ++r) {
    T acc = 0;
    for (std::size_t c = 0; c < w1.cols; ++c) acc += w1(r, c) * v[c];
    hidden[r] = relu(acc);
  }
  std::vector<T> out(w2.rows);
  for (std::size_t r = 0; r < w2.rows; ++r) {
    T acc = 0;
    for (std::size_t c = 0; c < w2.cols; ++c) acc += w2(r, c) * hidden[c];
    out[r] = sigmoid(acc);
  }
  return out;
}

template <class T>
std::vector<T> se_vector(const RepMBConvParams<T>& p) {
  return se_vector<T>(p.v, p.se_w1, p.se_w2);
}

// Output channel o of the result computes s[o] times output channel o of conv.
template <class T>
ConvParams<T> scale_output_channels(ConvParams<T> conv, std::span<const T> s) {
  if (s.size() != conv.c_out()) throw ShapeError("scale_output_channels: length mismatch");
  const std::size_t per = conv.kernel.size() / conv.c_out();
  for (std::size_t o = 0; o < conv.c_out(); ++o) {
    T* k = conv.kernel.data().data() + o * per;
    for (std::size_t i = 0; i < per; ++i) k[i] *= s[o];
    conv.bias[o] *= s[o];
  }
  return conv;
}

// The result applied to x equals conv applied to x with channel i scaled by v[i].
template <class T>
ConvParams<T> scale_input_channels(ConvParams<T> conv, std::span<const T> v) {
  if (conv.groups != 1) throw ShapeError("scale_input_channels: grouped conv unsupported");
  if (v.size() != conv.c_in()) throw ShapeError("scale_input_channels: length mismatch");
  const auto sh = conv.kernel.shape();
  for (std::size_t o = 0; o < sh.n; ++o)
    for (std::size_t i = 0; i < sh.c; ++i)
      for (std::size_t y = 0; y < sh.h; ++y)
        for (std::size_t x = 0; x < sh.w; ++x) conv.kernel(o, i, y, x) *= v[i];
  return conv;
}

// K2 with the identity branch added to its kernel when enabled.
template <class T>
ConvParams<T> effective_k2(const RepMBConvParams<T>& p) {
  ConvParams<T> k2 = p.k2;
  if (p.identity_branch) {
    const auto id = identity_kernel<T>(p.mid_channels(), p.kernel_size());
    for (std::size_t i = 0; i < id.size(); ++i) k2.kernel[i] += id[i];
  }
  return k2;
}

// Folds a 1x1 convolution followed by a kxk convolution into one kxk
// convolution. The pair is evaluated as: k1 on the input zero-padded by
// k2.padding, then k2 without padding; the merged layer carries k2's padding.
//   merged[o, i] = sum_m k2[o, m] * k1[m, i]
//   merged_b[o]  = b2[o] + sum_m (sum of k2[o, m] taps) * b1[m]
template <class T>
ConvParams<T> merge_pointwise_into_kxk(const ConvParams<T>& k1, const ConvParams<T>& k2) {
  k1.validate();
  k2.validate();
  if (k1.k_h() != 1 || k1.k_w() != 1 || k1.stride != 1 || k1.padding != 0)
    throw ShapeError("merge_pointwise_into_kxk: first conv must be an unpadded 1x1");
  if (k1.groups != 1 || k2.groups != 1) throw ShapeError("merge_pointwise_into_kxk: grouped conv unsupported");
  if (k2.c_in() != k1.c_out())
    throw ShapeError("merge_pointwise_into_kxk: " + std::to_string(k1.c_out()) + " channels feed a conv expecting " +
                     std::to_string(k2.c_in()));
  const std::size_t co = k2.c_out(), ci = k1.c_in(), cm = k1.c_out(), kh = k2.k_h(), kw = k2.k_w();
  ConvParams<T> merged(co, ci, kh, kw, k2.stride, k2.padding);
  for (std::size_t o = 0; o < co; ++o) {
    T b = k2.bias[o];
    for (std::size_t m = 0; m < cm; ++m) {
      T tap_sum = 0;
      for (std::size_t y = 0; y < kh; ++y)
        for (std::size_t x = 0; x < kw; ++x) tap_sum += k2.weight(o, m, y, x);
      b += tap_sum * k1.bias[m];
    }
    merged.bias[o] = b;
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t y = 0; y < kh; ++y)
        for (std::size_t x = 0; x < kw; ++x) {
          T acc = 0;
          for (std::size_t m = 0; m < cm; ++m) acc += k2.weight(o, m, y, x) * k1.weight(m, i, 0, 0);
          merged.weight(o, i, y, x) = acc;
        }
  }
  return merged;
}

// Folds a kxk convolution followed by a 1x1 convolution into one kxk
// convolution with k2's stride and padding.
//   merged[o, i] = sum_m k3[o, m] * k2[m, i]
//   merged_b[o]  = sum_m k3[o, m] * b2[m] + b3[o]
template <class T>
ConvParams<T> merge_kxk_into_pointwise(const ConvParams<T>& k2, const ConvParams<T>& k3) {
  k2.validate();
  k3.validate();
  if (k3.k_h() != 1 || k3.k_w() != 1 || k3.stride != 1 || k3.padding != 0)
    throw ShapeError("merge_kxk_into_pointwise: second conv must be an unpadded 1x1");
  if (k2.groups != 1 || k3.groups != 1) throw ShapeError("merge_kxk_into_pointwise: grouped conv unsupported");
  if (k3.c_in() != k2.c_out())
    throw ShapeError("merge_kxk_into_pointwise: " + std::to_string(k2.c_out()) + " channels feed a conv expecting " +
                     std::to_string(k3.c_in()));
  const std::size_t co = k3.c_out(), ci = k2.c_in(), cm = k2.c_out(), kh = k2.k_h(), kw = k2.k_w();
  ConvParams<T> merged(co, ci, kh, kw, k2.stride, k2.padding);
  for (std::size_t o = 0; o < co; ++o) {
    T b = 0;
    for (std::size_t m = 0; m < cm; ++m) b += k3.weight(o, m, 0, 0) * k2.bias[m];
    merged.bias[o] = b + k3.bias[o];
    for (std::size_t i = 0; i < ci; ++i)
      for (std::size_t y = 0; y < kh; ++y)
        for (std::size_t x = 0; x < kw; ++x) {
          T acc = 0;
          for (std::size_t m = 0; m < cm; ++m) acc += k3.weight(o, m, 0, 0) * k2.weight(m, i, y, x);
          merged.weight(o, i, y, x) = acc;
        }
  }
  return merged;
}

// Training-time forward of one block, residual included.
template <class T>
Tensor4<T> forward_train(TensorView<const T> x, const RepMBConvParams<T>& p) {
  p.validate();
  if (x.shape.c != p.channels())
    throw ShapeError("RepMBConv: input has " + std::to_string(x.shape.c) + " channels, block expects " +
                     std::to_string(p.channels()));
  const std::size_t pad = p.kernel_size() / 2;
  auto expanded = conv2d_padded<T>(x, p.k1, pad);
  scale_channels_inplace<T>(expanded.view(), p.s);
  auto mixed = conv2d_padded<T>(expanded.view(), effective_k2(p), 0);
  const auto gate = se_vector(p);
  scale_channels_inplace<T>(mixed.view(), gate);
  auto out = conv2d_padded<T>(mixed.view(), p.k3, 0);
  add_inplace(out.view(), x);
  return out;
}

template <class T>
Tensor4<T> forward_train(const Tensor4<T>& x, const RepMBConvParams<T>& p) {
  return forward_train(x.view(), p);
}

// Collapses the block into one (C, C, k, k) convolution, residual included:
//   K = ((K1 ⊙ s) merged into K2eff) merged into (K3 ⊙ se on its inputs) + I
template <class T>
FusedConv<T> fuse(const RepMBConvParams<T>& p) {
  p.validate();
  const std::size_t c = p.channels(), k = p.kernel_size();
  const auto expand = scale_output_channels<T>(p.k1, p.s);
  auto spatial = merge_pointwise_into_kxk(expand, effective_k2(p));
  const auto gate = se_vector(p);
  const auto squeeze = scale_input_channels<T>(p.k3, gate);
  FusedConv<T> fused = merge_kxk_into_pointwise(spatial, squeeze);
  const auto id = identity_kernel<T>(c, k);
  for (std::size_t i = 0; i < id.size(); ++i) fused.kernel[i] += id[i];
  fused.stride = 1;
  fused.padding = k / 2;
  return fused;
}

}  // namespace plainusr
