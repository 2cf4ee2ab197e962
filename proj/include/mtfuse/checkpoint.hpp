// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint binary format, version 1. Little-endian throughout.
//
//   bytes 0..3   magic "MTFZ"
//   u32          format version (1)
//   u64          config hash of the run that produced the file
//   u32          tensor count N
//   N records:   u32 name length, name bytes,
//                u32 dtype length, dtype bytes ("f32"),
//                u32 rank, i64 dims...,
//                u64 element offset into the payload, u64 element count
//   payload      all tensor values as little-endian IEEE f32, in record order
//
// Files are written to "<path>.tmp" and renamed into place so an interrupted
// run never leaves a truncated checkpoint at the final path.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtfuse/tensor.hpp"

namespace mtfuse {

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct CheckpointFile {
  std::uint32_t version = 1;
  std::uint64_t config_hash = 0;
  std::vector<TensorRecord> tensors;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace detail

inline std::string serialize_checkpoint(const CheckpointFile& ck) {
  std::string out;
  out += "MTFZ";
  detail::put_u32(out, ck.version);
  detail::put_u64(out, ck.config_hash);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, 3);
    out += "f32";
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    std::size_t numel = 1;
    for (int d : t.shape) {
      detail::put_u64(out, static_cast<std::uint64_t>(d));
      numel *= static_cast<std::size_t>(d);
    }
    if (numel != t.data.size()) {
      throw std::invalid_argument("checkpoint: tensor '" + t.name + "' shape " + shape_str(t.shape) +
                                  " does not match " + std::to_string(t.data.size()) + " values");
    }
    detail::put_u64(out, offset);
    detail::put_u64(out, static_cast<std::uint64_t>(t.data.size()));
    offset += t.data.size();
  }
  for (const auto& t : ck.tensors) {
    for (float v : t.data) detail::put_f32(out, v);
  }
  return out;
}

inline CheckpointFile parse_checkpoint(const std::string& bytes) {
  detail::ByteReader r{bytes};
  if (r.bytes(4) != "MTFZ") throw std::runtime_error("checkpoint: bad magic");
  CheckpointFile ck;
  ck.version = r.u32();
  if (ck.version != 1) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ck.version));
  ck.config_hash = r.u64();
  std::uint32_t n = r.u32();
  std::vector<std::uint64_t> offsets, counts;
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord t;
    t.name = r.bytes(r.u32());
    std::string dtype = r.bytes(r.u32());
    if (dtype != "f32") throw std::runtime_error("checkpoint: unsupported dtype '" + dtype + "'");
    std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<int>(r.u64()));
    offsets.push_back(r.u64());
    counts.push_back(r.u64());
    ck.tensors.push_back(std::move(t));
  }
  std::size_t payload_start = r.pos;
  for (std::uint32_t i = 0; i < n; ++i) {
    r.pos = payload_start + static_cast<std::size_t>(offsets[i]) * 4;
    ck.tensors[i].data.resize(static_cast<std::size_t>(counts[i]));
    for (auto& v : ck.tensors[i].data) v = r.f32();
  }
  return ck;
}

inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void save_checkpoint(const std::string& path, const CheckpointFile& ck) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

inline CheckpointFile load_checkpoint(const std::string& path, std::uint64_t expected_hash, bool force = false) {
  CheckpointFile ck = parse_checkpoint(read_file(path));
  if (!force && ck.config_hash != expected_hash) {
    throw std::runtime_error("checkpoint '" + path + "' was written under config hash " +
                             std::to_string(ck.config_hash) + ", expected " + std::to_string(expected_hash) +
                             " (pass force to override)");
  }
  return ck;
}

template <typename Real>
std::vector<TensorRecord> records_from_params(const std::vector<NamedParam<Real>>& params) {
  std::vector<TensorRecord> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    TensorRecord t;
    t.name = p.name;
    t.shape = p.tensor->shape;
    t.data.reserve(p.tensor->values.size());
    for (Real v : p.tensor->values) t.data.push_back(static_cast<float>(v));
    out.push_back(std::move(t));
  }
  return out;
}

template <typename Real>
void apply_records(const std::vector<NamedParam<Real>>& params, const std::vector<TensorRecord>& records) {
  if (params.size() != records.size()) {
    throw std::invalid_argument("checkpoint: " + std::to_string(records.size()) + " tensors for " +
                                std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name != records[i].name) {
      throw std::invalid_argument("checkpoint: tensor '" + records[i].name + "' where parameter '" + params[i].name +
                                  "' was expected");
    }
    if (params[i].tensor->shape != records[i].shape) {
      throw std::invalid_argument("checkpoint: tensor '" + records[i].name + "' has shape " +
                                  shape_str(records[i].shape) + ", parameter wants " +
                                  shape_str(params[i].tensor->shape));
    }
    for (std::size_t k = 0; k < records[i].data.size(); ++k) {
      params[i].tensor->values[k] = static_cast<Real>(records[i].data[k]);
    }
  }
}

}  // namespace mtfuse
