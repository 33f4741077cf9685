#pragma once

// Checkpoint container:
//   "FCT1" | u32 count | count x { u32 name_len | name (UTF-8) | u32 rank |
//   rank x u32 dim | prod(dims) x f32 }
// All integers and floats little-endian.

#include <set>
#include <string>
#include <vector>

#include "facet/binary_io.hpp"
#include "facet/layers.hpp"

namespace facet {

inline constexpr char kCheckpointMagic[] = "FCT1";

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointRecord>& records) {
  io::Writer w;
  w.raw(std::string(kCheckpointMagic, 4));
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    w.u32(static_cast<std::uint32_t>(r.name.size()));
    w.raw(r.name);
    w.u32(static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : r.values) w.f32(v);
  }
  return w.bytes();
}

inline std::vector<CheckpointRecord> decode_checkpoint(std::vector<std::uint8_t> bytes) {
  io::Reader r(std::move(bytes));
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw io::FormatError("not a checkpoint: bad magic");
  const std::uint32_t count = r.u32();
  std::vector<CheckpointRecord> out;
  out.reserve(count);
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name = r.raw(r.u32());
    if (!seen.insert(rec.name).second) throw io::FormatError("duplicate parameter in checkpoint: " + rec.name);
    const std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) rec.shape.push_back(r.u32());
    const std::size_t n = numel(rec.shape);
    rec.values.resize(n);
    for (auto& v : rec.values) v = r.f32();
    out.push_back(std::move(rec));
  }
  if (!r.at_end()) throw io::FormatError("trailing bytes after checkpoint records");
  return out;
}

template <class T>
std::vector<CheckpointRecord> snapshot(const ParameterSet<T>& params) {
  std::vector<CheckpointRecord> out;
  for (const auto& p : params.items()) {
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.values().begin(), p.tensor.values().end())});
  }
  return out;
}

// Copies matching records into `params`. Every parameter must be present with
// an identical shape; records for unknown names are an error unless
// `allow_extra` is set (loading a stage-1 checkpoint into a larger model).
template <class T>
void restore(ParameterSet<T>& params, const std::vector<CheckpointRecord>& records, bool allow_missing = false,
             bool allow_extra = false) {
  std::set<std::string> used;
  for (const auto& rec : records) {
    const auto* p = params.find(rec.name);
    if (!p) {
      if (allow_extra) continue;
      throw io::FormatError("checkpoint parameter not in model: " + rec.name);
    }
    if (p->tensor.shape() != rec.shape) {
      throw io::FormatError("shape mismatch for " + rec.name + ": model " + to_string(p->tensor.shape()) +
                            " vs checkpoint " + to_string(rec.shape));
    }
    auto t = p->tensor;
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec.values[i]);
    used.insert(rec.name);
  }
  if (!allow_missing) {
    for (const auto& p : params.items()) {
      if (!used.count(p.name)) throw io::FormatError("checkpoint is missing parameter: " + p.name);
    }
  }
}

template <class T>
void save_checkpoint(const std::string& path, const ParameterSet<T>& params) {
  io::write_file(path, encode_checkpoint(snapshot(params)));
}

template <class T>
void load_checkpoint(const std::string& path, ParameterSet<T>& params, bool allow_missing = false,
                     bool allow_extra = false) {
  restore(params, decode_checkpoint(io::read_file(path)), allow_missing, allow_extra);
}

}  // namespace facet
