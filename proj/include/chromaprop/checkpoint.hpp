#pragma once

// Binary checkpoint container for backbone and fusion weights. Layout is
// documented in docs/checkpoint.md; all integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chromaprop/backbone.hpp"
#include "chromaprop/flowfield.hpp"
#include "chromaprop/fusion.hpp"

namespace chromaprop {

inline constexpr char kCheckpointMagic[8] = {'C', 'P', 'R', 'O', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// One named array with its shape.
struct CheckpointEntry {
  std::vector<std::int64_t> dims;
  std::vector<double> values;
};

/// Ordered entries of one section.
using CheckpointSection = std::vector<std::pair<std::string, CheckpointEntry>>;

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, 4); }
  void i64(std::int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> bytes;

 private:
  void raw(const void* p, std::size_t n) {
    std::uint8_t buf[8];
    std::memcpy(buf, p, n);
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + n);
    bytes.insert(bytes.end(), buf, buf + n);
  }
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& data, std::string where) : data_(data), where_(std::move(where)) {}
  std::uint32_t u32(const char* field) { return get<std::uint32_t>(field); }
  std::int64_t i64(const char* field) { return get<std::int64_t>(field); }
  double f64(const char* field) { return get<double>(field); }
  std::string str(const char* field) {
    const auto n = u32(field);
    need(n, field);
    std::string s(data_.begin() + pos_, data_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) throw FormatError(where_ + ": truncated " + field);
  }

 private:
  template <class U>
  U get(const char* field) {
    need(sizeof(U), field);
    std::uint8_t buf[sizeof(U)];
    std::memcpy(buf, data_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, buf, sizeof(U));
    return v;
  }
  const std::vector<std::uint8_t>& data_;
  std::string where_;
  std::size_t pos_ = 0;
};

inline void put_conv(CheckpointSection& s, const std::string& name, const nn::Conv2d& c) {
  s.push_back({name + ".weight", {{c.out, c.in, c.kernel, c.kernel}, {c.weight.begin(), c.weight.end()}}});
  s.push_back({name + ".bias", {{c.out}, {c.bias.begin(), c.bias.end()}}});
}

inline const CheckpointEntry& find(const CheckpointSection& s, const std::string& key) {
  for (const auto& [k, e] : s)
    if (k == key) return e;
  throw FormatError("checkpoint: missing entry " + key);
}

inline nn::Conv2d get_conv(const CheckpointSection& s, const std::string& name) {
  const auto& w = find(s, name + ".weight");
  const auto& b = find(s, name + ".bias");
  if (w.dims.size() != 4 || w.dims[2] != w.dims[3] || b.dims.size() != 1 || b.dims[0] != w.dims[0])
    throw FormatError("checkpoint: bad shape for " + name);
  nn::Conv2d c(static_cast<int>(w.dims[1]), static_cast<int>(w.dims[0]), static_cast<int>(w.dims[2]));
  if (w.values.size() != c.weight.size()) throw FormatError("checkpoint: bad size for " + name + ".weight");
  if (b.values.size() != c.bias.size()) throw FormatError("checkpoint: bad size for " + name + ".bias");
  c.weight.assign(w.values.begin(), w.values.end());
  c.bias.assign(b.values.begin(), b.values.end());
  return c;
}

inline double get_scalar(const CheckpointSection& s, const std::string& key) {
  const auto& e = find(s, key);
  if (e.values.size() != 1) throw FormatError("checkpoint: " + key + " must be a scalar");
  return e.values[0];
}

}  // namespace detail

inline CheckpointSection to_section(const ToyBackbone& b) {
  CheckpointSection s;
  s.push_back({"layers", {{1}, {static_cast<double>(b.extractor().layers.size())}}});
  for (std::size_t l = 0; l < b.extractor().layers.size(); ++l)
    detail::put_conv(s, "extractor." + std::to_string(l), b.extractor().layers[l]);
  detail::put_conv(s, "head", b.head());
  return s;
}

inline ToyBackbone toy_backbone_from_section(const CheckpointSection& s) {
  const int layers = static_cast<int>(detail::get_scalar(s, "layers"));
  if (layers < 1 || layers > 64) throw FormatError("checkpoint: bad backbone layer count");
  nn::ConvStack ext;
  for (int l = 0; l < layers; ++l) {
    ext.layers.push_back(detail::get_conv(s, "extractor." + std::to_string(l)));
    ext.acts.push_back(nn::Activation::silu);
  }
  try {
    return ToyBackbone(std::move(ext), detail::get_conv(s, "head"));
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

inline CheckpointSection to_section(const FfmParams& p) {
  CheckpointSection s;
  s.push_back({"config", {{3},
                          {static_cast<double>(p.config.feature_channels), static_cast<double>(p.config.hidden),
                           static_cast<double>(p.config.projection)}}});
  for (std::size_t l = 0; l < p.weighting.layers.size(); ++l)
    detail::put_conv(s, "weighting." + std::to_string(l), p.weighting.layers[l]);
  detail::put_conv(s, "project_next", p.project_next);
  detail::put_conv(s, "project_prev", p.project_prev);
  for (std::size_t l = 0; l < p.refine.layers.size(); ++l)
    detail::put_conv(s, "refine." + std::to_string(l), p.refine.layers[l]);
  return s;
}

inline FfmParams ffm_from_section(const CheckpointSection& s) {
  const auto& cfg = detail::find(s, "config");
  if (cfg.values.size() != 3) throw FormatError("checkpoint: bad ffm config");
  FfmConfig c{static_cast<int>(cfg.values[0]), static_cast<int>(cfg.values[1]), static_cast<int>(cfg.values[2])};
  FfmParams p = make_ffm(c);
  for (std::size_t l = 0; l < 3; ++l) {
    p.weighting.layers[l] = detail::get_conv(s, "weighting." + std::to_string(l));
    p.refine.layers[l] = detail::get_conv(s, "refine." + std::to_string(l));
  }
  p.project_next = detail::get_conv(s, "project_next");
  p.project_prev = detail::get_conv(s, "project_prev");
  const FfmParams shape_ref = make_ffm(c);
  auto a = p.spans();
  auto b = const_cast<FfmParams&>(shape_ref).spans();
  for (std::size_t k = 0; k < a.size(); ++k)
    if (a[k].size() != b[k].size()) throw FormatError("checkpoint: ffm layer shapes disagree with config");
  return p;
}

inline std::vector<std::uint8_t> serialize_section(const CheckpointSection& s) {
  detail::ByteWriter w;
  w.u32(static_cast<std::uint32_t>(s.size()));
  for (const auto& [key, e] : s) {
    w.str(key);
    w.u32(static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) w.i64(d);
    w.i64(static_cast<std::int64_t>(e.values.size()));
    for (double v : e.values) w.f64(v);
  }
  return w.bytes;
}

/// FNV-1a over the serialized section bytes.
inline std::uint64_t checksum(const CheckpointSection& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : serialize_section(s)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t checksum(const ToyBackbone& b) { return checksum(to_section(b)); }

struct Checkpoint {
  std::optional<ToyBackbone> backbone;
  std::optional<FfmParams> ffm;
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::map<std::string, CheckpointSection> sections;
  if (ckpt.backbone) sections["backbone.toy"] = to_section(*ckpt.backbone);
  if (ckpt.ffm) sections["ffm"] = to_section(*ckpt.ffm);

  detail::ByteWriter w;
  w.bytes.insert(w.bytes.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, sec] : sections) {
    w.str(name);
    const auto payload = serialize_section(sec);
    w.i64(static_cast<std::int64_t>(payload.size()));
    w.bytes.insert(w.bytes.end(), payload.begin(), payload.end());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(w.bytes.data()), static_cast<std::streamsize>(w.bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string where = path.string();
  if (data.size() < 8 || std::memcmp(data.data(), kCheckpointMagic, 8) != 0)
    throw FormatError(where + ": bad magic");
  const std::vector<std::uint8_t> body(data.begin() + 8, data.end());
  detail::ByteReader r(body, where);
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError(where + ": unsupported version " + std::to_string(version));
  const auto count = r.u32("section count");
  Checkpoint ckpt;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name = r.str("section name");
    const auto size = r.i64("section size");
    if (size < 0) throw FormatError(where + ": negative section size");
    CheckpointSection sec;
    const auto entries = r.u32("entry count");
    for (std::uint32_t e = 0; e < entries; ++e) {
      std::pair<std::string, CheckpointEntry> item;
      item.first = r.str("entry name");
      const auto rank = r.u32("rank");
      if (rank > 8) throw FormatError(where + ": implausible rank for " + item.first);
      for (std::uint32_t d = 0; d < rank; ++d) item.second.dims.push_back(r.i64("dims"));
      const auto n = r.i64("value count");
      if (n < 0) throw FormatError(where + ": negative value count for " + item.first);
      r.need(static_cast<std::size_t>(n) * 8, "values");
      item.second.values.resize(static_cast<std::size_t>(n));
      for (auto& v : item.second.values) v = r.f64("values");
      sec.push_back(std::move(item));
    }
    if (name == "backbone.toy")
      ckpt.backbone = toy_backbone_from_section(sec);
    else if (name == "ffm")
      ckpt.ffm = ffm_from_section(sec);
    else
      throw FormatError(where + ": unknown section " + name);
  }
  if (!r.done()) throw FormatError(where + ": trailing bytes");
  return ckpt;
}

}  // namespace chromaprop
