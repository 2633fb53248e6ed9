#pragma once

// Analytic cost model of a PlainUSR model at a given input size.
//
// Conventions: conv MACs = k_h * k_w * (c_in / groups) * c_out * h_out * w_out
// (bias adds excluded); activations count convolution output elements only;
// pooling, activation, scaling, attention products and pixel shuffle cost 0
// MACs. Training-form units are counted as executed, i.e. the 1x1 expansion
// runs on the padded extent. Parameters include biases and the non-conv
// groups (s, v, SE weights), which appear as parameter-only rows.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "plainusr/model.hpp"

namespace plainusr {

struct LayerProfile {
  std::string name;
  std::string kind;  // "conv" or "params"
  std::size_t c_in = 0, c_out = 0, k = 0, stride = 1;
  std::size_t out_h = 0, out_w = 0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t activations = 0;
};

struct ProfileReport {
  static constexpr int schema_version = 1;

  std::size_t height = 0, width = 0;
  std::size_t scale = 0;
  Form form = Form::training;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::uint64_t activations = 0;
  // Peak body feature memory of the in-place schedule for the deployed model:
  // the C0-channel buffer plus the two unit outputs of the widest block.
  std::uint64_t peak_feature_elements = 0;
  std::uint64_t peak_feature_bytes = 0;
  std::vector<LayerProfile> layers;

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& l : layers)
      rows.push_back({{"name", l.name},
                      {"kind", l.kind},
                      {"c_in", l.c_in},
                      {"c_out", l.c_out},
                      {"kernel", l.k},
                      {"stride", l.stride},
                      {"out_h", l.out_h},
                      {"out_w", l.out_w},
                      {"params", l.params},
                      {"macs", l.macs},
                      {"activations", l.activations}});
    return {{"schema_version", schema_version},
            {"input", {{"height", height}, {"width", width}}},
            {"scale", scale},
            {"form", form == Form::fused ? "fused" : "training"},
            {"params", params},
            {"macs", macs},
            {"activations", activations},
            {"peak_feature_elements", peak_feature_elements},
            {"peak_feature_bytes", peak_feature_bytes},
            {"layers", rows}};
  }
};

namespace detail {

struct Profiler {
  ProfileReport& r;

  // Returns the output extent.
  std::pair<std::size_t, std::size_t> conv(const std::string& name, std::size_t c_in, std::size_t c_out,
                                            std::size_t k, std::size_t stride, std::size_t pad, std::size_t groups,
                                            std::size_t h, std::size_t w) {
    LayerProfile l;
    l.name = name;
    l.kind = "conv";
    l.c_in = c_in;
    l.c_out = c_out;
    l.k = k;
    l.stride = stride;
    l.out_h = conv_extent(h, k, stride, pad);
    l.out_w = conv_extent(w, k, stride, pad);
    l.params = std::uint64_t(k) * k * (c_in / groups) * c_out + c_out;
    l.activations = std::uint64_t(c_out) * l.out_h * l.out_w;
    l.macs = std::uint64_t(k) * k * (c_in / groups) * l.activations;
    r.layers.push_back(l);
    return {l.out_h, l.out_w};
  }

  template <class T>
  std::pair<std::size_t, std::size_t> conv(const std::string& name, const ConvParams<T>& p, std::size_t h,
                                            std::size_t w, std::size_t pad) {
    return conv(name, p.c_in(), p.c_out(), p.k_h(), p.stride, pad, p.groups, h, w);
  }

  void params(const std::string& name, std::uint64_t n) {
    LayerProfile l;
    l.name = name;
    l.kind = "params";
    l.params = n;
    r.layers.push_back(l);
  }
};

}  // namespace detail

template <class T>
ProfileReport profile(const PlainUSRModel<T>& m, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("profile: input size must be positive");
  ProfileReport r;
  r.height = h;
  r.width = w;
  r.scale = m.config.scale;
  r.form = m.form;
  detail::Profiler p{r};

  p.conv("head", m.head, h, w, m.head.padding);
  std::size_t widest = 0;
  for (std::size_t i = 0; i < m.blocks.size(); ++i) {
    const auto& b = m.blocks[i];
    widest = std::max(widest, b.width);
    const std::string bp = "blocks." + std::to_string(i);
    for (std::size_t j = 0; j < 2; ++j) {
      const std::string up = bp + ".rep" + std::to_string(j + 1);
      if (const auto* rep = std::get_if<RepMBConvParams<T>>(&b.units[j])) {
        const std::size_t pad = rep->kernel_size() / 2;
        auto [eh, ew] = p.conv(up + ".k1", rep->k1, h, w, pad);
        auto [mh, mw] = p.conv(up + ".k2", rep->k2, eh, ew, 0);
        p.conv(up + ".k3", rep->k3, mh, mw, 0);
        p.params(up + ".s_v_se", rep->s.size() + rep->v.size() + rep->se_w1.data.size() + rep->se_w2.data.size());
      } else {
        const auto& c = std::get<ConvParams<T>>(b.units[j]);
        p.conv(up, c, h, w, c.padding);
      }
    }
    if (b.lia) {
      const auto& l = *b.lia;
      const std::size_t ph = conv_extent(h, l.pool_k, l.pool_stride, 0);
      const std::size_t pw = conv_extent(w, l.pool_k, l.pool_stride, 0);
      auto [ah, aw] = p.conv(bp + ".lia.conv_a", l.conv_a, ph, pw, l.conv_a.padding);
      p.conv(bp + ".lia.conv_b", l.conv_b, ah, aw, l.conv_b.padding);
    }
  }
  p.conv("tail", m.tail, h, w, m.tail.padding);

  for (const auto& l : r.layers) {
    r.params += l.params;
    r.macs += l.macs;
    r.activations += l.activations;
  }
  const std::uint64_t plane = std::uint64_t(h) * w;
  r.peak_feature_elements = m.config.stage_channels.front() * plane + 2 * widest * plane;
  r.peak_feature_bytes = r.peak_feature_elements * sizeof(T);
  return r;
}

}  // namespace plainusr
