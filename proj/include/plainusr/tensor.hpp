#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "plainusr/error.hpp"

namespace plainusr {

// (batch, channel, height, width)
struct Shape4 {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr std::size_t sample() const { return c * h * w; }
  friend constexpr bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

namespace detail {
// Thread-local tally of live tensor elements, active only while a
// FeatureMemoryProbe exists on the thread.
struct LiveTally {
  int depth = 0;
  std::size_t live = 0;
  std::size_t peak = 0;
};
inline thread_local LiveTally live_tally;
}  // namespace detail

// Records the peak number of tensor elements simultaneously alive on the
// current thread between construction and destruction of the probe. Only
// tensors allocated while the probe is active are counted.
class FeatureMemoryProbe {
 public:
  FeatureMemoryProbe() {
    auto& t = detail::live_tally;
    if (t.depth++ == 0) t.live = t.peak = 0;
  }
  ~FeatureMemoryProbe() { --detail::live_tally.depth; }
  FeatureMemoryProbe(const FeatureMemoryProbe&) = delete;
  FeatureMemoryProbe& operator=(const FeatureMemoryProbe&) = delete;

  std::size_t peak_elements() const { return detail::live_tally.peak; }
  std::size_t live_elements() const { return detail::live_tally.live; }
};

// Non-owning view over an NCHW block where each sample's (c, h, w) part is
// contiguous but samples may be further apart (batch_stride). Channel slices
// of a tensor are views of this kind.
template <class T>
struct TensorView {
  T* data = nullptr;
  Shape4 shape;
  std::size_t batch_stride = 0;

  T* plane(std::size_t n, std::size_t c) const { return data + n * batch_stride + c * shape.plane(); }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return plane(n, c)[y * shape.w + x];
  }
  operator TensorView<const T>() const
    requires(!std::is_const_v<T>)
  {
    return {data, shape, batch_stride};
  }
};

// Dense rank-4 tensor in row-major NCHW order.
template <class T>
class Tensor4 {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) { track(); }
  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape_.str());
    track();
  }
  Tensor4(const Tensor4& o) : shape_(o.shape_), data_(o.data_) { track(); }
  Tensor4(Tensor4&& o) noexcept
      : shape_(std::exchange(o.shape_, {})), data_(std::move(o.data_)), tracked_(std::exchange(o.tracked_, 0)) {
    o.data_.clear();
  }
  Tensor4& operator=(const Tensor4& o) {
    if (this != &o) {
      untrack();
      shape_ = o.shape_;
      data_ = o.data_;
      track();
    }
    return *this;
  }
  Tensor4& operator=(Tensor4&& o) noexcept {
    if (this != &o) {
      untrack();
      shape_ = std::exchange(o.shape_, {});
      data_ = std::move(o.data_);
      o.data_.clear();
      tracked_ = std::exchange(o.tracked_, 0);
    }
    return *this;
  }
  ~Tensor4() { untrack(); }

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_.c + c) * shape_.h + y) * shape_.w + x];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  TensorView<T> view() { return {data_.data(), shape_, shape_.sample()}; }
  TensorView<const T> view() const { return {data_.data(), shape_, shape_.sample()}; }
  operator TensorView<const T>() const { return view(); }

  friend bool operator==(const Tensor4& a, const Tensor4& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

 private:
  void track() {
    auto& t = detail::live_tally;
    if (t.depth > 0 && !data_.empty()) {
      tracked_ = data_.size();
      t.live += tracked_;
      if (t.live > t.peak) t.peak = t.live;
    }
  }
  void untrack() {
    if (tracked_ != 0) {
      auto& t = detail::live_tally;
      t.live = t.live >= tracked_ ? t.live - tracked_ : 0;
      tracked_ = 0;
    }
  }

  Shape4 shape_;
  std::vector<T> data_;
  std::size_t tracked_ = 0;
};

// Copies a (possibly strided) view into a fresh contiguous tensor.
template <class T>
Tensor4<std::remove_const_t<T>> materialize(TensorView<T> v) {
  Tensor4<std::remove_const_t<T>> out(v.shape);
  const std::size_t sample = v.shape.sample();
  for (std::size_t n = 0; n < v.shape.n; ++n) {
    const T* src = v.data + n * v.batch_stride;
    std::copy(src, src + sample, out.data().data() + n * sample);
  }
  return out;
}

// Row-major dense matrix.
template <class T>
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  friend bool operator==(const Matrix&, const Matrix&) = default;
};

// Convolution weights: kernel (c_out, c_in / groups, k_h, k_w) plus a bias per
// output channel.
template <class T>
struct ConvParams {
  Tensor4<T> kernel;
  std::vector<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;

  ConvParams() = default;
  ConvParams(std::size_t c_out, std::size_t c_in, std::size_t k_h, std::size_t k_w, std::size_t stride_ = 1,
             std::size_t padding_ = 0, std::size_t groups_ = 1)
      : kernel(Shape4{c_out, groups_ == 0 ? 0 : c_in / groups_, k_h, k_w}),
        bias(c_out, T(0)),
        stride(stride_),
        padding(padding_),
        groups(groups_) {
    if (groups_ == 0 || c_in % groups_ != 0) throw ShapeError("conv c_in not divisible by groups");
    validate();
  }

  // Square, shape-preserving (padding = k/2) convolution.
  static ConvParams same(std::size_t c_out, std::size_t c_in, std::size_t k, std::size_t stride = 1) {
    return ConvParams(c_out, c_in, k, k, stride, k / 2);
  }

  std::size_t c_out() const { return kernel.shape().n; }
  std::size_t c_in() const { return kernel.shape().c * groups; }
  std::size_t k_h() const { return kernel.shape().h; }
  std::size_t k_w() const { return kernel.shape().w; }
  std::size_t param_count() const { return kernel.size() + bias.size(); }

  T& weight(std::size_t o, std::size_t i, std::size_t y, std::size_t x) { return kernel(o, i, y, x); }
  const T& weight(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const { return kernel(o, i, y, x); }

  void validate() const {
    if (groups == 0 || stride == 0) throw ShapeError("conv stride and groups must be positive");
    if (c_out() % groups != 0) throw ShapeError("conv c_out not divisible by groups");
    if (bias.size() != c_out())
      throw ShapeError("conv bias length " + std::to_string(bias.size()) + " != c_out " + std::to_string(c_out()));
    if (k_h() == 0 || k_w() == 0) throw ShapeError("conv kernel has zero extent");
  }

  friend bool operator==(const ConvParams& a, const ConvParams& b) {
    return a.kernel == b.kernel && a.bias == b.bias && a.stride == b.stride && a.padding == b.padding &&
           a.groups == b.groups;
  }
};

}  // namespace plainusr
