#pragma once

// Binary parameter container shared by base-model and generator checkpoints.
//
//   "GMECKPT\0"                      8 bytes
//   format version                   u32
//   schema hash                      u64
//   tag length, tag bytes            u32, bytes   (variant name; "base" for the CTR model)
//   parameter count                  u32
//   per parameter: name length, name, rank (u32), extents (u64 each)
//   per parameter, same order: row-major f64 payload
//   total payload byte count         u64
//
// All integers and reals are little-endian.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gme/ctr_model.hpp"

namespace gme {

struct checkpoint_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'G', 'M', 'E', 'C', 'K', 'P', 'T', '\0'};

struct Checkpoint {
  std::uint64_t schema_hash = 0;
  std::string tag;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return t;
    throw checkpoint_error("checkpoint has no parameter '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& [n, t] : params)
      if (n == name) return true;
    return false;
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(std::string bytes) : b_(std::move(bytes)) {}
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw checkpoint_error("checkpoint truncated");
  }
  std::string b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, ck.schema_hash);
  detail::put_str(out, ck.tag);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.params.size()));
  std::uint64_t payload = 0;
  for (const auto& [name, t] : ck.params) {
    detail::put_str(out, name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put_u64(out, e);
    payload += 8 * t.size();
  }
  for (const auto& [name, t] : ck.params)
    for (double v : t.storage()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  detail::put_u64(out, payload);
  return out;
}

inline Checkpoint deserialize(std::string bytes) {
  detail::Reader r(std::move(bytes));
  if (r.raw(8) != std::string(kCheckpointMagic, 8)) throw checkpoint_error("not a checkpoint file");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw checkpoint_error("checkpoint format version " + std::to_string(version) + " is not supported");
  Checkpoint ck;
  ck.schema_hash = r.u64();
  ck.tag = r.str();
  const auto n = r.u32();
  std::vector<std::pair<std::string, Shape>> heads;
  std::uint64_t payload = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = r.str();
    const auto rank = r.u32();
    if (rank == 0 || rank > 8) throw checkpoint_error("bad rank for '" + name + "'");
    Shape s;
    for (std::uint32_t k = 0; k < rank; ++k) {
      s.push_back(r.u64());
      if (s.back() == 0 || s.back() > (1ULL << 32)) throw checkpoint_error("bad extent for '" + name + "'");
    }
    payload += 8 * shape_numel(s);
    heads.emplace_back(std::move(name), std::move(s));
  }
  for (auto& [name, shape] : heads) {
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = std::bit_cast<double>(r.u64());
    ck.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.u64() != payload) throw checkpoint_error("checkpoint payload size mismatch");
  if (!r.done()) throw checkpoint_error("trailing bytes after checkpoint");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = serialize(ck);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw checkpoint_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw checkpoint_error("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw checkpoint_error("cannot move checkpoint into " + path);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw checkpoint_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

inline Checkpoint to_checkpoint(const BaseModel& m) {
  Checkpoint ck{m.schema.hash(), "base", {}};
  for (const auto& [name, t] : m.named()) ck.params.emplace_back(name, *t);
  return ck;
}

inline BaseModel from_checkpoint(const Checkpoint& ck, const FieldSchema& schema) {
  if (ck.tag != "base") throw checkpoint_error("checkpoint tag '" + ck.tag + "' is not a base model");
  if (ck.schema_hash != schema.hash()) throw checkpoint_error("checkpoint was written for a different schema");
  BaseModel m;
  m.schema = schema;
  for (std::size_t f = 0; f < schema.size(); ++f) m.tables.push_back(ck.get("table/" + schema[f].name));
  m.dim = m.tables.at(0).cols();
  for (std::size_t l = 0; ck.has("fc" + std::to_string(l) + "/w"); ++l) {
    m.weights.push_back(ck.get("fc" + std::to_string(l) + "/w"));
    m.biases.push_back(ck.get("fc" + std::to_string(l) + "/b"));
  }
  m.out_w = ck.get("out/w");
  m.out_b = ck.get("out/b");
  std::size_t in = m.input_width();
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    if (m.weights[l].rank() != 2 || m.weights[l].rows() != in || m.biases[l].size() != m.weights[l].cols())
      throw checkpoint_error("layer " + std::to_string(l) + " shapes do not chain");
    in = m.weights[l].cols();
  }
  for (const auto& t : m.tables)
    if (t.cols() != m.dim) throw checkpoint_error("embedding tables disagree on dimension");
  if (m.out_w.size() != in || m.out_b.size() != 1) throw checkpoint_error("output layer shape mismatch");
  return m;
}

inline void save_base_model(const BaseModel& m, const std::string& path) { save_checkpoint(to_checkpoint(m), path); }

inline BaseModel load_base_model(const std::string& path, const FieldSchema& schema) {
  return from_checkpoint(load_checkpoint_file(path), schema);
}

}  // namespace gme
