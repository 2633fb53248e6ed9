#pragma once

// PlainUSR: head conv -> PlainU-Net of H-blocks -> tail conv -> pixel shuffle.
//
// An H-block is two RepMBConv units (each followed by GELU) and an LIA. The
// PlainU-Net runs 2S-1 blocks for S stages with widths C0, C1, ..., C(S-1),
// ..., C1, C0. Two schedules are provided:
//   forward_train    explicit split / concat: after a descending block the
//                    first C(i+1) channels go on and the rest are held, and on
//                    the way up the processed feature is concatenated before
//                    the held remainder.
//   forward_indexed  one C0-channel buffer; block j rewrites channels
//                    [0, width_j) in place.
// Both run the same per-block arithmetic and give bit-identical results.

#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "plainusr/error.hpp"
#include "plainusr/init.hpp"
#include "plainusr/lia.hpp"
#include "plainusr/ops.hpp"
#include "plainusr/reparam.hpp"
#include "plainusr/tensor.hpp"

namespace plainusr {

enum class BlockKind { repmbconv, conv };
enum class Form : std::uint8_t { training = 0, fused = 1 };

struct LiaConfig {
  bool enabled = true;
  std::size_t kernel = 3;
  std::size_t squeeze = 4;
  std::size_t pool_k = 2;
  std::size_t pool_stride = 2;
  ImportanceMode mode = ImportanceMode::softpool;

  friend bool operator==(const LiaConfig&, const LiaConfig&) = default;
};

struct ModelConfig {
  std::vector<std::size_t> stage_channels;
  std::size_t scale = 4;
  std::size_t kernel = 3;
  std::size_t in_channels = 3;
  std::size_t expansion = 2;
  std::size_t se_reduction = 4;
  bool identity_branch = true;
  // conv builds the plain-convolution baseline of the same topology.
  BlockKind block = BlockKind::repmbconv;
  LiaConfig lia;

  std::size_t stages() const { return stage_channels.size(); }
  std::size_t num_blocks() const { return stage_channels.empty() ? 0 : 2 * stage_channels.size() - 1; }

  // Channel width of every block in execution order.
  std::vector<std::size_t> block_widths() const {
    std::vector<std::size_t> w(stage_channels.begin(), stage_channels.end());
    for (std::size_t i = stage_channels.size(); i-- > 1;) w.push_back(stage_channels[i - 1]);
    return w;
  }

  void validate() const {
    if (stage_channels.empty()) throw ConfigError("model config: no stages");
    for (std::size_t i = 0; i < stage_channels.size(); ++i) {
      if (stage_channels[i] == 0) throw ConfigError("model config: zero channel count");
      if (i > 0 && stage_channels[i] > stage_channels[i - 1])
        throw ConfigError("model config: stage channels must be non-increasing");
    }
    if (scale < 2 || scale > 4) throw ConfigError("model config: scale must be 2, 3 or 4");
    if (kernel % 2 == 0) throw ConfigError("model config: kernel size must be odd");
    if (in_channels == 0 || expansion == 0 || se_reduction == 0)
      throw ConfigError("model config: in_channels, expansion and se_reduction must be positive");
    if (lia.kernel % 2 == 0 || lia.squeeze == 0 || lia.pool_k == 0 || lia.pool_stride == 0)
      throw ConfigError("model config: invalid attention geometry");
  }

  // Named variants U, T, S, M, B, L.
  static ModelConfig preset(std::string_view name, std::size_t scale = 4) {
    ModelConfig cfg;
    cfg.scale = scale;
    const char v = name.size() == 1 ? static_cast<char>(std::toupper(static_cast<unsigned char>(name[0]))) : '?';
    switch (v) {
      case 'U': cfg.stage_channels = {16, 8}; break;
      case 'T': cfg.stage_channels = {32, 16}; break;
      case 'S': cfg.stage_channels = {32, 16, 8}; break;
      case 'M': cfg.stage_channels = {48, 32, 16}; break;
      case 'B': cfg.stage_channels = {64, 48, 32}; break;
      case 'L': cfg.stage_channels = {80, 64, 48}; break;
      default: throw ConfigError("unknown variant '" + std::string(name) + "' (expected U, T, S, M, B or L)");
    }
    cfg.validate();
    return cfg;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// One conv slot of an H-block: a RepMBConv in training form or a plain
// convolution (fused form, or the plain-conv baseline).
template <class T>
using Unit = std::variant<RepMBConvParams<T>, ConvParams<T>>;

template <class T>
struct HBlock {
  std::size_t width = 0;
  std::array<Unit<T>, 2> units;
  std::optional<LIAParams<T>> lia;

  friend bool operator==(const HBlock&, const HBlock&) = default;
};

template <class T>
struct PlainUSRModel {
  ModelConfig config;
  Form form = Form::training;
  ConvParams<T> head;
  std::vector<HBlock<T>> blocks;
  ConvParams<T> tail;

  friend bool operator==(const PlainUSRModel&, const PlainUSRModel&) = default;
};

enum class InitMode {
  training,  // training start point (see init_repmbconv_training)
  random,    // all groups at full scale, for equivalence fuzzing
  zeros,
};

// Zero-valued model with the geometry implied by cfg. Training form holds
// RepMBConv units unless cfg.block is conv, in which case units are plain
// convolutions and the form is always fused.
template <class T>
PlainUSRModel<T> make_skeleton(const ModelConfig& cfg, Form form) {
  cfg.validate();
  if (cfg.block == BlockKind::conv) form = Form::fused;
  PlainUSRModel<T> m;
  m.config = cfg;
  m.form = form;
  const std::size_t k = cfg.kernel;
  m.head = ConvParams<T>::same(cfg.stage_channels.front(), cfg.in_channels, k);
  for (std::size_t w : cfg.block_widths()) {
    HBlock<T> b;
    b.width = w;
    for (auto& u : b.units) {
      if (form == Form::training)
        u = RepMBConvParams<T>::zeros(w, cfg.expansion, k, cfg.se_reduction, cfg.identity_branch);
      else
        u = ConvParams<T>::same(w, w, k);
    }
    if (cfg.lia.enabled)
      b.lia = LIAParams<T>::zeros(w, cfg.lia.kernel, cfg.lia.squeeze, cfg.lia.pool_k, cfg.lia.pool_stride,
                                  cfg.lia.mode);
    m.blocks.push_back(std::move(b));
  }
  m.tail = ConvParams<T>::same(cfg.in_channels * cfg.scale * cfg.scale, cfg.stage_channels.front(), k);
  return m;
}

// Deterministic in seed: identical (cfg, seed, mode) give bit-identical
// parameters.
template <class T>
PlainUSRModel<T> build_model(const ModelConfig& cfg, std::uint64_t seed, InitMode mode = InitMode::training) {
  auto m = make_skeleton<T>(cfg, Form::training);
  if (mode == InitMode::zeros) return m;
  Rng rng(seed);
  init_conv(m.head, rng);
  for (auto& b : m.blocks) {
    for (auto& u : b.units) {
      if (auto* rep = std::get_if<RepMBConvParams<T>>(&u)) {
        if (mode == InitMode::random)
          init_repmbconv_random(*rep, rng);
        else
          init_repmbconv_training(*rep, rng);
      } else {
        init_conv(std::get<ConvParams<T>>(u), rng);
      }
    }
    if (b.lia) init_lia(*b.lia, rng);
  }
  init_conv(m.tail, rng);
  return m;
}

// Visits every parameter tensor in canonical order with
// fn(name, dims, span). Names look like "blocks.2.rep1.k2.kernel".
template <class M, class Fn>
void for_each_parameter(M& m, Fn&& fn) {
  using Dims = std::vector<std::uint32_t>;
  auto u32 = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
  auto conv = [&](const std::string& prefix, auto& c) {
    const auto s = c.kernel.shape();
    fn(prefix + ".kernel", Dims{u32(s.n), u32(s.c), u32(s.h), u32(s.w)}, c.kernel.data());
    fn(prefix + ".bias", Dims{u32(c.bias.size())}, std::span(c.bias));
  };
  conv("head", m.head);
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string bp = "blocks." + std::to_string(i);
    for (std::size_t j = 0; j < 2; ++j) {
      const std::string up = bp + ".rep" + std::to_string(j + 1);
      std::visit(
          [&](auto& unit) {
            if constexpr (requires { unit.se_w1; }) {
              conv(up + ".k1", unit.k1);
              conv(up + ".k2", unit.k2);
              conv(up + ".k3", unit.k3);
              fn(up + ".s", Dims{u32(unit.s.size())}, std::span(unit.s));
              fn(up + ".v", Dims{u32(unit.v.size())}, std::span(unit.v));
              fn(up + ".se_w1", Dims{u32(unit.se_w1.rows), u32(unit.se_w1.cols)}, std::span(unit.se_w1.data));
              fn(up + ".se_w2", Dims{u32(unit.se_w2.rows), u32(unit.se_w2.cols)}, std::span(unit.se_w2.data));
            } else {
              conv(up, unit);
            }
          },
          b.units[j]);
    }
    if (b.lia) {
      conv(bp + ".lia.conv_a", b.lia->conv_a);
      conv(bp + ".lia.conv_b", b.lia->conv_b);
    }
  }
  conv("tail", m.tail);
}

template <class T>
std::size_t parameter_count(const PlainUSRModel<T>& m) {
  std::size_t n = 0;
  for_each_parameter(m, [&](const std::string&, const auto&, auto span) { n += span.size(); });
  return n;
}

template <class T>
Tensor4<T> unit_forward(const Unit<T>& unit, TensorView<const T> x) {
  return std::visit(
      [&](const auto& u) -> Tensor4<T> {
        if constexpr (std::is_same_v<std::remove_cvref_t<decltype(u)>, RepMBConvParams<T>>)
          return forward_train(x, u);
        else
          return conv2d(x, u);
      },
      unit);
}

// Runs one H-block on `in` and writes the result to `out`, which may be the
// same channels as `in`.
template <class T>
void block_forward_into(const HBlock<T>& b, TensorView<const T> in, TensorView<T> out) {
  if (in.shape.c != b.width)
    throw ShapeError("H-block of width " + std::to_string(b.width) + " got " + std::to_string(in.shape.c) +
                     " channels");
  auto first = unit_forward(b.units[0], in);
  gelu_inplace(first.view());
  auto second = unit_forward<T>(b.units[1], first.view());
  first = Tensor4<T>();
  gelu_inplace(second.view());
  if (b.lia)
    apply_lia_into<T>(second.view(), *b.lia, out);
  else
    write_channels<T>(out, 0, b.width, second.view());
}

namespace detail {
template <class T>
void check_input(const PlainUSRModel<T>& m, TensorView<const T> x) {
  if (x.shape.c != m.config.in_channels)
    throw ShapeError("model expects " + std::to_string(m.config.in_channels) + " input channels, got " +
                     std::to_string(x.shape.c));
  if (m.blocks.size() != m.config.num_blocks()) throw ConfigError("model block count does not match its config");
}
}  // namespace detail

// Split / concat schedule.
template <class T>
Tensor4<T> forward_train(const PlainUSRModel<T>& m, TensorView<const T> x) {
  detail::check_input(m, x);
  const auto& ch = m.config.stage_channels;
  const std::size_t stages = ch.size();
  auto feat = conv2d(x, m.head);
  std::vector<Tensor4<T>> held;
  std::size_t bi = 0;
  auto run_block = [&](const Tensor4<T>& in) {
    Tensor4<T> out(in.shape());
    block_forward_into<T>(m.blocks[bi++], in.view(), out.view());
    return out;
  };
  for (std::size_t s = 0; s < stages; ++s) {
    auto y = run_block(feat);
    if (s + 1 < stages) {
      const std::size_t keep = ch[s + 1];
      held.push_back(materialize(slice_channels(y, keep, ch[s])));
      feat = materialize(slice_channels(y, 0, keep));
    } else {
      feat = std::move(y);
    }
  }
  for (std::size_t s = stages - 1; s-- > 0;) {
    auto joined = concat_channels<T>(feat.view(), held.back().view());
    held.pop_back();
    feat = run_block(joined);
  }
  auto tail = conv2d<T>(feat.view(), m.tail);
  return pixel_shuffle(tail, m.config.scale);
}

template <class T>
Tensor4<T> forward_train(const PlainUSRModel<T>& m, const Tensor4<T>& x) {
  return forward_train(m, x.view());
}

// Channel-index schedule over one persistent buffer. Works for either form.
// When body_peak_elements is given it receives the peak number of feature
// elements alive between the head output and the last block.
template <class T>
Tensor4<T> forward_indexed(const PlainUSRModel<T>& m, TensorView<const T> x,
                           std::size_t* body_peak_elements = nullptr) {
  detail::check_input(m, x);
  Tensor4<T> buffer;
  {
    std::optional<FeatureMemoryProbe> probe;
    if (body_peak_elements) probe.emplace();
    buffer = conv2d(x, m.head);
    for (const auto& b : m.blocks) {
      auto channels = slice_channels(buffer.view(), 0, b.width);
      block_forward_into<T>(b, channels, channels);
    }
    if (body_peak_elements) *body_peak_elements = probe->peak_elements();
  }
  auto tail = conv2d<T>(buffer.view(), m.tail);
  return pixel_shuffle(tail, m.config.scale);
}

template <class T>
Tensor4<T> forward_indexed(const PlainUSRModel<T>& m, const Tensor4<T>& x,
                           std::size_t* body_peak_elements = nullptr) {
  return forward_indexed(m, x.view(), body_peak_elements);
}

// Deployed inference path; requires a fused model.
template <class T>
Tensor4<T> forward_fused(const PlainUSRModel<T>& m, TensorView<const T> x,
                         std::size_t* body_peak_elements = nullptr) {
  if (m.form != Form::fused) throw ConfigError("forward_fused called on a training-form model");
  return forward_indexed(m, x, body_peak_elements);
}

template <class T>
Tensor4<T> forward_fused(const PlainUSRModel<T>& m, const Tensor4<T>& x,
                         std::size_t* body_peak_elements = nullptr) {
  return forward_fused(m, x.view(), body_peak_elements);
}

// Collapses every RepMBConv unit into its single convolution. Head, tail and
// attention weights are copied unchanged.
template <class T>
PlainUSRModel<T> fuse_model(const PlainUSRModel<T>& m) {
  if (m.form != Form::training) throw ConfigError("fuse_model: model is already fused");
  PlainUSRModel<T> out = m;
  out.form = Form::fused;
  for (auto& b : out.blocks)
    for (auto& u : b.units)
      if (auto* rep = std::get_if<RepMBConvParams<T>>(&u)) u = fuse(*rep);
  return out;
}

// Converts every parameter to another scalar type.
template <class To, class From>
PlainUSRModel<To> cast_model(const PlainUSRModel<From>& m) {
  auto out = make_skeleton<To>(m.config, m.form);
  std::vector<std::span<const From>> src;
  for_each_parameter(m, [&](const std::string&, const auto&, auto span) { src.push_back(span); });
  std::size_t i = 0;
  for_each_parameter(out, [&](const std::string&, const auto&, auto span) {
    const auto& s = src[i++];
    for (std::size_t j = 0; j < span.size(); ++j) span[j] = static_cast<To>(s[j]);
  });
  for (std::size_t b = 0; b < m.blocks.size(); ++b)
    for (std::size_t u = 0; u < 2; ++u)
      if (auto* rep = std::get_if<RepMBConvParams<From>>(&m.blocks[b].units[u]))
        std::get<RepMBConvParams<To>>(out.blocks[b].units[u]).identity_branch = rep->identity_branch;
  return out;
}

}  // namespace plainusr
