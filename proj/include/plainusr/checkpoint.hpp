#pragma once

// PUSR checkpoint container. All integers and scalars are little-endian.
//
//   magic          4 bytes  "PUSR"
//   version        u16      1
//   form           u8       0 training, 1 fused
//   config_len     u32
//   config         config_len bytes of UTF-8 JSON (compact, keys sorted)
//   tensor_count   u32
//   tensor_count entries:
//     name_len u32, name bytes, dtype u8 (0 f32, 1 f64), rank u8,
//     dims u32[rank], offset u64 (absolute, from start of file)
//   payload        each tensor at its offset, 64-byte aligned, zero-filled
//                  gaps; the file ends at the last tensor's final byte.
//
// Tensors appear in canonical order (see for_each_parameter), so equal models
// serialize to identical bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "plainusr/error.hpp"
#include "plainusr/model.hpp"

namespace plainusr {

enum class CheckpointErrorKind {
  io,
  bad_magic,
  unknown_version,
  truncated,
  overlap,
  misaligned,
  trailing_data,
  bad_config,
  bad_form,
  tensor_mismatch,
  dtype_mismatch,
};

inline const char* to_string(CheckpointErrorKind k) {
  switch (k) {
    case CheckpointErrorKind::io: return "io";
    case CheckpointErrorKind::bad_magic: return "bad_magic";
    case CheckpointErrorKind::unknown_version: return "unknown_version";
    case CheckpointErrorKind::truncated: return "truncated";
    case CheckpointErrorKind::overlap: return "overlap";
    case CheckpointErrorKind::misaligned: return "misaligned";
    case CheckpointErrorKind::trailing_data: return "trailing_data";
    case CheckpointErrorKind::bad_config: return "bad_config";
    case CheckpointErrorKind::bad_form: return "bad_form";
    case CheckpointErrorKind::tensor_mismatch: return "tensor_mismatch";
    case CheckpointErrorKind::dtype_mismatch: return "dtype_mismatch";
  }
  return "unknown";
}

class CheckpointError : public Error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what)
      : Error(std::string("checkpoint: ") + what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

namespace checkpoint {

inline constexpr char kMagic[4] = {'P', 'U', 'S', 'R'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kAlignment = 64;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct TensorEntry {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::uint64_t offset = 0;

  std::uint64_t elements() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  std::uint64_t bytes() const { return elements() * dtype_size(dtype); }
};

struct Header {
  std::uint16_t version = kVersion;
  Form form = Form::training;
  ModelConfig config;
  std::vector<TensorEntry> tensors;
  std::uint64_t header_bytes = 0;  // up to the end of the tensor table
};

// --- config <-> JSON --------------------------------------------------------

inline nlohmann::json config_to_json(const ModelConfig& c) {
  nlohmann::json lia = {
      {"enabled", c.lia.enabled},
      {"kernel", c.lia.kernel},
      {"squeeze", c.lia.squeeze},
      {"pool_k", c.lia.pool_k},
      {"pool_stride", c.lia.pool_stride},
      {"mode", c.lia.mode == ImportanceMode::softpool ? "softpool" : "maxpool"},
  };
  return {
      {"stage_channels", c.stage_channels},
      {"scale", c.scale},
      {"kernel", c.kernel},
      {"in_channels", c.in_channels},
      {"expansion", c.expansion},
      {"se_reduction", c.se_reduction},
      {"identity_branch", c.identity_branch},
      {"block", c.block == BlockKind::repmbconv ? "repmbconv" : "conv"},
      {"lia", lia},
  };
}

// Throws ConfigError on missing or ill-typed fields and on invalid configs.
inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
    c.scale = j.at("scale").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.expansion = j.at("expansion").get<std::size_t>();
    c.se_reduction = j.at("se_reduction").get<std::size_t>();
    c.identity_branch = j.at("identity_branch").get<bool>();
    const auto block = j.at("block").get<std::string>();
    if (block == "repmbconv")
      c.block = BlockKind::repmbconv;
    else if (block == "conv")
      c.block = BlockKind::conv;
    else
      throw ConfigError("unknown block kind '" + block + "'");
    const auto& l = j.at("lia");
    c.lia.enabled = l.at("enabled").get<bool>();
    c.lia.kernel = l.at("kernel").get<std::size_t>();
    c.lia.squeeze = l.at("squeeze").get<std::size_t>();
    c.lia.pool_k = l.at("pool_k").get<std::size_t>();
    c.lia.pool_stride = l.at("pool_stride").get<std::size_t>();
    const auto mode = l.at("mode").get<std::string>();
    if (mode == "softpool")
      c.lia.mode = ImportanceMode::softpool;
    else if (mode == "maxpool")
      c.lia.mode = ImportanceMode::maxpool;
    else
      throw ConfigError("unknown importance mode '" + mode + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config JSON: ") + e.what());
  }
  c.validate();
  return c;
}

// --- little-endian byte helpers -----------------------------------------------

namespace detail {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class T>
void put_scalar(std::uint8_t* dst, T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

template <class T>
T get_scalar(const std::uint8_t* src) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= U(src[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

inline std::uint64_t align_up(std::uint64_t v) { return (v + kAlignment - 1) / kAlignment * kAlignment; }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= U(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      throw CheckpointError(CheckpointErrorKind::truncated,
                            std::string("file ends inside the header (") + what + ")");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// --- header ------------------------------------------------------------------

// Parses and structurally checks the header and tensor table. Does not match
// tensors against the config.
inline Header read_header(std::span<const std::uint8_t> bytes) {
  using K = CheckpointErrorKind;
  detail::Reader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw CheckpointError(K::bad_magic, "not a PUSR file (bad magic)");
  r.str(4, "magic");
  Header h;
  h.version = r.get<std::uint16_t>("version");
  if (h.version != kVersion)
    throw CheckpointError(K::unknown_version, "unsupported format version " + std::to_string(h.version));
  const auto form = r.get<std::uint8_t>("form");
  if (form > 1) throw CheckpointError(K::bad_form, "unknown form code " + std::to_string(form));
  h.form = static_cast<Form>(form);

  const auto config_len = r.get<std::uint32_t>("config length");
  const auto config_text = r.str(config_len, "config");
  try {
    h.config = config_from_json(nlohmann::json::parse(config_text));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(K::bad_config, std::string("config is not valid JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(K::bad_config, e.what());
  }

  const auto count = r.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry t;
    const auto name_len = r.get<std::uint32_t>("tensor name length");
    t.name = r.str(name_len, "tensor name");
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype > 1) throw CheckpointError(K::dtype_mismatch, t.name + ": unknown dtype code " + std::to_string(dtype));
    t.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint8_t>("rank");
    for (std::uint8_t d = 0; d < rank; ++d) t.dims.push_back(r.get<std::uint32_t>("dims"));
    t.offset = r.get<std::uint64_t>("offset");
    h.tensors.push_back(std::move(t));
  }
  h.header_bytes = r.pos();

  std::uint64_t end = h.header_bytes;
  for (const auto& t : h.tensors) {
    if (t.offset % kAlignment != 0)
      throw CheckpointError(K::misaligned, t.name + ": offset " + std::to_string(t.offset) + " is not 64-byte aligned");
    if (t.offset < end)
      throw CheckpointError(K::overlap, t.name + ": offset " + std::to_string(t.offset) +
                                            " overlaps the preceding data (ends at " + std::to_string(end) + ")");
    end = t.offset + t.bytes();
    if (end > bytes.size())
      throw CheckpointError(K::truncated, t.name + ": payload extends past end of file (" + std::to_string(end) +
                                              " > " + std::to_string(bytes.size()) + ")");
  }
  if (end < bytes.size())
    throw CheckpointError(K::trailing_data, std::to_string(bytes.size() - end) + " unexpected bytes after payload");
  return h;
}

// --- save ----------------------------------------------------------------------

template <class T>
std::vector<std::uint8_t> serialize(const PlainUSRModel<T>& m) {
  struct Item {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::span<const T> data;
  };
  std::vector<Item> items;
  for_each_parameter(m, [&](const std::string& name, const std::vector<std::uint32_t>& dims, auto span) {
    items.push_back({name, dims, std::span<const T>(span)});
  });

  const std::string config = config_to_json(m.config).dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  detail::put_le(out, kVersion);
  detail::put_le(out, static_cast<std::uint8_t>(m.form));
  detail::put_le(out, static_cast<std::uint32_t>(config.size()));
  out.insert(out.end(), config.begin(), config.end());
  detail::put_le(out, static_cast<std::uint32_t>(items.size()));

  // Table size is known before offsets are, so lay out offsets first.
  std::uint64_t table_end = out.size();
  for (const auto& it : items) table_end += 4 + it.name.size() + 1 + 1 + 4 * it.dims.size() + 8;
  std::vector<std::uint64_t> offsets;
  std::uint64_t cursor = table_end;
  for (const auto& it : items) {
    cursor = detail::align_up(cursor);
    offsets.push_back(cursor);
    cursor += it.data.size() * sizeof(T);
  }

  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    detail::put_le(out, static_cast<std::uint32_t>(it.name.size()));
    out.insert(out.end(), it.name.begin(), it.name.end());
    detail::put_le(out, static_cast<std::uint8_t>(dtype_of<T>()));
    detail::put_le(out, static_cast<std::uint8_t>(it.dims.size()));
    for (auto d : it.dims) detail::put_le(out, d);
    detail::put_le(out, offsets[i]);
  }
  out.resize(cursor, 0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::uint8_t* dst = out.data() + offsets[i];
    for (T v : items[i].data) {
      detail::put_scalar(dst, v);
      dst += sizeof(T);
    }
  }
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorKind::io, "cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw CheckpointError(CheckpointErrorKind::io, "read error on '" + path + "'");
  return bytes;
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw CheckpointError(CheckpointErrorKind::io, "write error on '" + path + "'");
}

// --- load ----------------------------------------------------------------------

inline DType file_dtype(const Header& h) {
  if (h.tensors.empty()) return DType::f32;
  const DType d = h.tensors.front().dtype;
  for (const auto& t : h.tensors)
    if (t.dtype != d)
      throw CheckpointError(CheckpointErrorKind::dtype_mismatch, t.name + ": mixed dtypes in one checkpoint");
  return d;
}

template <class T>
PlainUSRModel<T> deserialize(std::span<const std::uint8_t> bytes) {
  using K = CheckpointErrorKind;
  const Header h = read_header(bytes);
  if (!h.tensors.empty() && file_dtype(h) != dtype_of<T>())
    throw CheckpointError(K::dtype_mismatch, std::string("file holds ") +
                                                 (file_dtype(h) == DType::f32 ? "f32" : "f64") +
                                                 " tensors, requested " + (dtype_of<T>() == DType::f32 ? "f32" : "f64"));
  if (h.config.block == BlockKind::conv && h.form != Form::fused)
    throw CheckpointError(K::bad_form, "a plain-conv model can only be stored in fused form");

  auto m = make_skeleton<T>(h.config, h.form);
  std::size_t i = 0;
  for_each_parameter(m, [&](const std::string& name, const std::vector<std::uint32_t>& dims, auto span) {
    if (i >= h.tensors.size())
      throw CheckpointError(K::tensor_mismatch, "missing tensor '" + name + "'");
    const auto& t = h.tensors[i++];
    if (t.name != name)
      throw CheckpointError(K::tensor_mismatch, "expected tensor '" + name + "', found '" + t.name + "'");
    if (t.dims != dims) {
      auto fmt = [](const std::vector<std::uint32_t>& d) {
        std::string s = "[";
        for (std::size_t k = 0; k < d.size(); ++k) s += (k ? "," : "") + std::to_string(d[k]);
        return s + "]";
      };
      throw CheckpointError(K::tensor_mismatch,
                            "tensor '" + name + "' has shape " + fmt(t.dims) + ", config implies " + fmt(dims));
    }
    const std::uint8_t* src = bytes.data() + t.offset;
    for (auto& v : span) {
      v = detail::get_scalar<T>(src);
      src += sizeof(T);
    }
  });
  if (i != h.tensors.size())
    throw CheckpointError(K::tensor_mismatch, "unexpected extra tensor '" + h.tensors[i].name + "'");
  return m;
}

}  // namespace checkpoint

template <class T>
void save(const PlainUSRModel<T>& m, const std::string& path) {
  checkpoint::write_file(path, checkpoint::serialize(m));
}

template <class T>
PlainUSRModel<T> load(const std::string& path) {
  const auto bytes = checkpoint::read_file(path);
  return checkpoint::deserialize<T>(bytes);
}

using AnyModel = std::variant<PlainUSRModel<float>, PlainUSRModel<double>>;

// Loads a checkpoint in whichever scalar type it was stored.
inline AnyModel load_any(const std::string& path) {
  const auto bytes = checkpoint::read_file(path);
  if (checkpoint::file_dtype(checkpoint::read_header(bytes)) == checkpoint::DType::f64)
    return checkpoint::deserialize<double>(bytes);
  return checkpoint::deserialize<float>(bytes);
}

}  // namespace plainusr
