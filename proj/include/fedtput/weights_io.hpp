#pragma once

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedtput/error.hpp"
#include "fedtput/nn.hpp"

namespace fedtput {

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> values;

  bool operator==(const NamedTensor&) const = default;
};

/// Ordered list of named tensors; the unit of exchange and persistence.
using ParamSet = std::vector<NamedTensor>;

enum class WeightDtype : std::uint8_t { f32 = 0, f64 = 1 };

inline constexpr std::uint16_t kWeightFormatVersion = 1;

namespace detail {

inline NamedTensor tensor(std::string name, std::vector<std::uint32_t> dims, const std::vector<double>& v) {
  return {std::move(name), std::move(dims), v};
}

inline std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

inline void append_lstm(ParamSet& out, const std::string& prefix, const LstmParams& p) {
  out.push_back(tensor(prefix + ".wx", {u32(4 * p.hidden), u32(p.input)}, p.wx));
  out.push_back(tensor(prefix + ".wh", {u32(4 * p.hidden), u32(p.hidden)}, p.wh));
  out.push_back(tensor(prefix + ".b", {u32(4 * p.hidden)}, p.b));
}

inline void append_dense(ParamSet& out, const DenseParams& d) {
  out.push_back(tensor("dense.w", {u32(d.input), 1}, d.w));
  out.push_back(tensor("dense.b", {1}, d.b));
}

}  // namespace detail

/// The aggregated part: lstm1, plus the dense head under global ownership.
inline ParamSet global_part(const ModelWeights& w) {
  ParamSet out;
  detail::append_lstm(out, "lstm1", w.lstm1);
  if (w.dense_owner == DenseOwnership::global) detail::append_dense(out, w.dense);
  return out;
}

/// The per-client part that never leaves the device.
inline ParamSet local_part(const ModelWeights& w) {
  ParamSet out;
  detail::append_lstm(out, "lstm2", w.lstm2);
  if (w.dense_owner == DenseOwnership::local) detail::append_dense(out, w.dense);
  return out;
}

inline ParamSet all_params(const ModelWeights& w) {
  ParamSet out;
  detail::append_lstm(out, "lstm1", w.lstm1);
  detail::append_lstm(out, "lstm2", w.lstm2);
  detail::append_dense(out, w.dense);
  if (w.scaler.fitted()) {
    const auto d = detail::u32(w.scaler.channels());
    out.push_back(detail::tensor("scaler.min", {d}, w.scaler.lo));
    out.push_back(detail::tensor("scaler.max", {d}, w.scaler.hi));
  }
  return out;
}

inline std::size_t param_count(const ParamSet& ps) {
  std::size_t n = 0;
  for (const auto& t : ps) n += t.values.size();
  return n;
}

/// Overwrites the named tensors of w. Every tensor must name a known layer
/// with matching dimensions.
inline void install(ModelWeights& w, const ParamSet& ps) {
  ParamSet reference = all_params(w);
  for (const auto& t : ps) {
    if (t.name == "scaler.min" || t.name == "scaler.max") continue;
    auto it = std::find_if(reference.begin(), reference.end(), [&](const NamedTensor& r) { return r.name == t.name; });
    if (it == reference.end()) throw Error(Errc::shape_mismatch, "unknown layer " + t.name);
    if (it->dims != t.dims || it->values.size() != t.values.size())
      throw Error(Errc::shape_mismatch, "layer " + t.name + " has wrong dimensions");
  }
  for (const auto& t : ps) {
    if (t.name == "lstm1.wx") w.lstm1.wx = t.values;
    else if (t.name == "lstm1.wh") w.lstm1.wh = t.values;
    else if (t.name == "lstm1.b") w.lstm1.b = t.values;
    else if (t.name == "lstm2.wx") w.lstm2.wx = t.values;
    else if (t.name == "lstm2.wh") w.lstm2.wh = t.values;
    else if (t.name == "lstm2.b") w.lstm2.b = t.values;
    else if (t.name == "dense.w") w.dense.w = t.values;
    else if (t.name == "dense.b") w.dense.b = t.values;
  }
}

/// True when both sets carry the same names and dimensions in the same order.
inline bool same_shape(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || a[i].dims != b[i].dims || a[i].values.size() != b[i].values.size()) return false;
  return true;
}

// ---------------------------------------------------------------------------
// FPW1 binary format, little-endian throughout:
//   "FPW1" | u16 version | u32 layer count |
//   per layer: u16 name length, name bytes, u8 dtype (0 f32, 1 f64), u8 rank,
//              rank x u32 dims, row-major values |
//   u32 CRC32 of all preceding bytes

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    bytes_.insert(bytes_.end(), buf, buf + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), c, c + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, data_ + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw Error(Errc::checksum_mismatch, "weight blob truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* p, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_params(const ParamSet& ps, WeightDtype dtype = WeightDtype::f64) {
  detail::ByteWriter w;
  w.put_bytes("FPW1", 4);
  w.put<std::uint16_t>(kWeightFormatVersion);
  w.put<std::uint32_t>(detail::u32(ps.size()));
  for (const auto& t : ps) {
    std::size_t expect = 1;
    for (auto d : t.dims) expect *= d;
    if (expect != t.values.size()) throw Error(Errc::shape_mismatch, "tensor " + t.name + " dims/value count");
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name.data(), t.name.size());
    w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.put<std::uint32_t>(d);
    for (double v : t.values) {
      if (dtype == WeightDtype::f32) w.put<float>(static_cast<float>(v));
      else w.put<double>(v);
    }
  }
  const auto crc = detail::crc32_of(w.bytes().data(), w.bytes().size());
  w.put<std::uint32_t>(crc);
  return std::move(w.bytes());
}

inline ParamSet decode_params(const std::uint8_t* data, std::size_t size) {
  if (size < 4 || std::memcmp(data, "FPW1", 4) != 0) throw Error(Errc::bad_magic, "not an FPW1 blob");
  if (size < 4 + 2 + 4 + 4) throw Error(Errc::checksum_mismatch, "weight blob truncated");
  detail::ByteReader trailer(data + size - 4, 4);
  if (trailer.get<std::uint32_t>() != detail::crc32_of(data, size - 4))
    throw Error(Errc::checksum_mismatch, "CRC32 mismatch");

  detail::ByteReader r(data, size - 4);
  r.get_string(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kWeightFormatVersion)
    throw Error(Errc::version_unsupported, "format version " + std::to_string(version));
  const auto layers = r.get<std::uint32_t>();
  ParamSet out;
  for (std::uint32_t l = 0; l < layers; ++l) {
    NamedTensor t;
    t.name = r.get_string(r.get<std::uint16_t>());
    const auto dtype = r.get<std::uint8_t>();
    if (dtype > 1) throw Error(Errc::version_unsupported, "dtype code " + std::to_string(dtype));
    const auto rank = r.get<std::uint8_t>();
    std::size_t count = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      t.dims.push_back(r.get<std::uint32_t>());
      count *= t.dims.back();
    }
    t.values.resize(count);
    for (auto& v : t.values) v = dtype == 0 ? static_cast<double>(r.get<float>()) : r.get<double>();
    out.push_back(std::move(t));
  }
  return out;
}

inline ParamSet decode_params(const std::vector<std::uint8_t>& blob) { return decode_params(blob.data(), blob.size()); }

/// Rebuilds a model from a parameter set holding every layer.
inline ModelWeights model_from_params(const ParamSet& ps, DenseOwnership owner = DenseOwnership::local) {
  auto find = [&](std::string_view name) -> const NamedTensor& {
    for (const auto& t : ps)
      if (t.name == name) return t;
    throw Error(Errc::shape_mismatch, "missing layer " + std::string(name));
  };
  const auto& wx1 = find("lstm1.wx");
  const auto& wx2 = find("lstm2.wx");
  if (wx1.dims.size() != 2 || wx2.dims.size() != 2 || wx1.dims[0] % 4 || wx2.dims[0] % 4)
    throw Error(Errc::shape_mismatch, "lstm input weights must be rank 2 with 4*hidden rows");
  ModelShape shape{wx1.dims[1], wx1.dims[0] / 4u, wx2.dims[0] / 4u};
  if (wx2.dims[1] != shape.hidden1) throw Error(Errc::shape_mismatch, "lstm2 input != lstm1 hidden");
  ModelWeights w = zero_model(shape);
  w.dense_owner = owner;
  ParamSet layers;
  for (const auto& t : ps)
    if (t.name.rfind("scaler.", 0) != 0) layers.push_back(t);
  install(w, layers);
  bool has_min = false, has_max = false;
  for (const auto& t : ps) {
    has_min |= t.name == "scaler.min";
    has_max |= t.name == "scaler.max";
  }
  if (has_min && has_max) w.scaler = Scaler::make(ScalerMode::minmax, find("scaler.min").values, find("scaler.max").values);
  return w;
}

inline std::vector<std::uint8_t> encode_model(const ModelWeights& w, WeightDtype dtype = WeightDtype::f64) {
  if (w.scaler.fitted() && w.scaler.mode != ScalerMode::minmax)
    throw Error(Errc::invalid_argument, "weight files store min-max scalers only");
  return encode_params(all_params(w), dtype);
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::io, "short write to " + path);
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_weights(const ModelWeights& w, const std::string& path, WeightDtype dtype = WeightDtype::f64) {
  write_bytes(path, encode_model(w, dtype));
}

inline ModelWeights load_weights(const std::string& path, DenseOwnership owner = DenseOwnership::local) {
  return model_from_params(decode_params(read_bytes(path)), owner);
}

}  // namespace fedtput
