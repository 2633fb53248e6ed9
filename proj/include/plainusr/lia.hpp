#pragma once

// Local importance-based attention.
//
//   A(X) = sigmoid(X[0]) ⊙ bilinear(sigmoid(I(X))) ⊙ X
//
// I(X) is a single-channel importance map at reduced resolution: softpool
// (window 2, stride 2 by default), a strided kxk squeeze conv C -> C/q and a kxk
// conv C/q -> 1, with no activation in between. Both modulators lie in (0, 1)
// and broadcast over all channels.

#include <cstddef>
#include <string>
#include <vector>

#include "plainusr/error.hpp"
#include "plainusr/ops.hpp"
#include "plainusr/tensor.hpp"

namespace plainusr {

enum class ImportanceMode { softpool, maxpool };

// Ablation variants of the attention:
//   I   identity
//   II  gate only           sigmoid(X[0]) ⊙ X
//   III importance only     bilinear(sigmoid(I(X))) ⊙ X
//   IV  full, max-pooled importance
//   V   full, sigmoid and bilinear swapped: sigmoid(bilinear(I(X)))
//   VI  full attention
enum class LiaVariant { I, II, III, IV, V, VI };

template <class T>
struct LIAParams {
  ConvParams<T> conv_a;  // kxk, stride 2, C -> C/q
  ConvParams<T> conv_b;  // kxk, stride 1, C/q -> 1
  std::size_t pool_k = 2;
  std::size_t pool_stride = 2;
  std::size_t squeeze = 4;
  ImportanceMode mode = ImportanceMode::softpool;

  static std::size_t squeezed_width(std::size_t c, std::size_t q) { return std::max<std::size_t>(1, c / q); }

  static LIAParams zeros(std::size_t c, std::size_t k = 3, std::size_t q = 4, std::size_t pool_k = 2,
                         std::size_t pool_stride = 2, ImportanceMode mode = ImportanceMode::softpool) {
    if (c == 0 || q == 0) throw ShapeError("LIA: channels and squeeze must be positive");
    if (k % 2 == 0) throw ShapeError("LIA: kernel size must be odd");
    LIAParams p;
    const std::size_t cq = squeezed_width(c, q);
    p.conv_a = ConvParams<T>::same(cq, c, k, 2);
    p.conv_b = ConvParams<T>::same(1, cq, k, 1);
    p.pool_k = pool_k;
    p.pool_stride = pool_stride;
    p.squeeze = q;
    p.mode = mode;
    return p;
  }

  std::size_t channels() const { return conv_a.c_in(); }

  void validate() const {
    conv_a.validate();
    conv_b.validate();
    if (conv_b.c_out() != 1) throw ShapeError("LIA: importance conv must have exactly one output channel");
    if (conv_b.c_in() != conv_a.c_out()) throw ShapeError("LIA: squeeze conv widths inconsistent");
    if (pool_k == 0 || pool_stride == 0) throw ShapeError("LIA: pooling window and stride must be positive");
  }

  // Smallest spatial extent the downsampling chain accepts.
  std::size_t min_input_extent() const {
    for (std::size_t e = 1;; ++e)
      if (fits(e)) return e;
  }

  bool fits(std::size_t extent) const {
    if (extent < pool_k) return false;
    const std::size_t pooled = (extent - pool_k) / pool_stride + 1;
    if (pooled + 2 * conv_a.padding < conv_a.k_h()) return false;
    const std::size_t a = (pooled + 2 * conv_a.padding - conv_a.k_h()) / conv_a.stride + 1;
    return a + 2 * conv_b.padding >= conv_b.k_h();
  }

  friend bool operator==(const LIAParams&, const LIAParams&) = default;
};

// Records the elementwise passes apply_lia performs, in order.
struct LiaTrace {
  std::vector<std::string> steps;

  // Number of multiplications of the input by an input-derived map.
  std::size_t modulations() const {
    std::size_t n = 0;
    for (const auto& s : steps)
      if (s.rfind("modulate", 0) == 0) ++n;
    return n;
  }
};

template <class T>
Tensor4<T> local_importance(TensorView<const T> x, const LIAParams<T>& p,
                            ImportanceMode mode = ImportanceMode::softpool) {
  p.validate();
  if (x.shape.c != p.channels())
    throw ShapeError("LIA: input has " + std::to_string(x.shape.c) + " channels, expected " +
                     std::to_string(p.channels()));
  if (!p.fits(x.shape.h) || !p.fits(x.shape.w))
    throw ShapeError("LIA: input " + x.shape.str() + " too small for the downsampling chain (minimum extent " +
                     std::to_string(p.min_input_extent()) + ")");
  auto pooled = mode == ImportanceMode::softpool ? softpool2d(x, p.pool_k, p.pool_stride)
                                                 : maxpool2d(x, p.pool_k, p.pool_stride);
  auto squeezed = conv2d<T>(pooled.view(), p.conv_a);
  pooled = Tensor4<T>();
  return conv2d<T>(squeezed.view(), p.conv_b);
}

template <class T>
Tensor4<T> local_importance(const Tensor4<T>& x, const LIAParams<T>& p) {
  return local_importance(x.view(), p, p.mode);
}

// Writes the chosen attention variant of x into out (same shape). out may
// alias x.
template <class T>
void apply_lia_into(TensorView<const T> x, const LIAParams<T>& p, TensorView<T> out,
                    LiaVariant variant = LiaVariant::VI, LiaTrace* trace = nullptr) {
  if (!(x.shape == out.shape)) throw ShapeError("LIA: output view " + out.shape.str() + " != input " + x.shape.str());
  if (x.shape.c == 0) throw ShapeError("LIA: input has no channels");
  const Shape4 sh = x.shape;
  auto note = [&](const char* s) {
    if (trace) trace->steps.emplace_back(s);
  };

  const bool use_gate = variant != LiaVariant::I && variant != LiaVariant::III;
  const bool use_importance = variant != LiaVariant::I && variant != LiaVariant::II;

  Tensor4<T> importance;
  if (use_importance) {
    const auto mode = variant == LiaVariant::IV ? ImportanceMode::maxpool : p.mode;
    auto raw = local_importance(x, p, mode);
    note("importance");
    if (variant == LiaVariant::V) {
      importance = bilinear_resize<T>(raw.view(), sh.h, sh.w);
      raw = Tensor4<T>();
      note("bilinear");
      sigmoid_inplace(importance.view());
      note("sigmoid");
    } else {
      sigmoid_inplace(raw.view());
      note("sigmoid");
      importance = bilinear_resize<T>(raw.view(), sh.h, sh.w);
      note("bilinear");
    }
  }

  Tensor4<T> gate;
  if (use_gate) {
    gate = Tensor4<T>(Shape4{sh.n, 1, sh.h, sh.w});
    for (std::size_t n = 0; n < sh.n; ++n) {
      const T* x0 = x.plane(n, 0);
      T* g = gate.view().plane(n, 0);
      for (std::size_t i = 0; i < sh.plane(); ++i) g[i] = sigmoid(x0[i]);
    }
    note("gate");
  }

  if (x.data != out.data) write_channels<T>(out, 0, sh.c, x);
  auto modulate = [&](const Tensor4<T>& map, const char* label) {
    for (std::size_t n = 0; n < sh.n; ++n) {
      const T* m = map.view().plane(n, 0);
      for (std::size_t c = 0; c < sh.c; ++c) {
        T* o = out.plane(n, c);
        for (std::size_t i = 0; i < sh.plane(); ++i) o[i] = m[i] * o[i];
      }
    }
    note(label);
  };
  if (use_importance) modulate(importance, "modulate:importance");
  if (use_gate) modulate(gate, "modulate:gate");
}

template <class T>
Tensor4<T> lia_variant(TensorView<const T> x, const LIAParams<T>& p, LiaVariant variant, LiaTrace* trace = nullptr) {
  Tensor4<T> out(x.shape);
  apply_lia_into(x, p, out.view(), variant, trace);
  return out;
}

template <class T>
Tensor4<T> lia_variant(const Tensor4<T>& x, const LIAParams<T>& p, LiaVariant variant, LiaTrace* trace = nullptr) {
  return lia_variant(x.view(), p, variant, trace);
}

template <class T>
Tensor4<T> apply_lia(TensorView<const T> x, const LIAParams<T>& p, LiaTrace* trace = nullptr) {
  return lia_variant(x, p, LiaVariant::VI, trace);
}

template <class T>
Tensor4<T> apply_lia(const Tensor4<T>& x, const LIAParams<T>& p, LiaTrace* trace = nullptr) {
  return lia_variant(x.view(), p, LiaVariant::VI, trace);
}

}  // namespace plainusr
