#pragma once

#include <cstring>
#include <fstream>

#include "shiftdiff/common.hpp"

namespace shiftdiff {

// Binary checkpoint: magic "SDPM", u32 version, length-prefixed UTF-8 metadata
// (the serialized config plus ckpt.* keys), then named tensor blocks. All
// integers and IEEE-754 doubles are little-endian regardless of host.
constexpr char kCheckpointMagic[4] = {'S', 'D', 'P', 'M'};
constexpr uint32_t kCheckpointVersion = 1;

struct TensorBlock {
  std::string name;
  std::vector<uint64_t> dims;
  Vec data;

  uint64_t count() const {
    uint64_t n = 1;
    for (uint64_t d : dims) n *= d;
    return n;
  }
};

struct CheckpointData {
  std::string meta;
  std::vector<TensorBlock> tensors;

  const TensorBlock* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  const TensorBlock& get(const std::string& name) const {
    const TensorBlock* t = find(name);
    if (!t) throw io_error("checkpoint: missing tensor block '" + name + "'");
    return *t;
  }
};

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : b_(bytes), path_(path) {}

  uint32_t u32() { return static_cast<uint32_t>(take(4)); }
  uint64_t u64() { return take(8); }
  double f64() {
    uint64_t bits = take(8);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(uint64_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == b_.size(); }
  size_t pos() const { return pos_; }

 private:
  void need(uint64_t n) {
    if (pos_ + n > b_.size())
      throw io_error(path_ + ": truncated checkpoint at offset " + std::to_string(pos_));
  }
  uint64_t take(int n) {
    need(n);
    uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= static_cast<uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += n;
    return v;
  }

  const std::string& b_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const CheckpointData& ckpt) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, ckpt.meta.size());
  out += ckpt.meta;
  detail::put_u64(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    detail::put_u32(out, static_cast<uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, static_cast<uint32_t>(t.dims.size()));
    for (uint64_t d : t.dims) detail::put_u64(out, d);
    if (t.data.size() != t.count())
      throw io_error("checkpoint: tensor '" + t.name + "' dims disagree with data size");
    for (double d : t.data) detail::put_f64(out, d);
  }
  return out;
}

inline CheckpointData parse_checkpoint(const std::string& bytes, const std::string& path) {
  detail::Reader r(bytes, path);
  std::string magic = r.bytes(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
    throw io_error(path + ": not a checkpoint (bad magic)");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw io_error(path + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointData ckpt;
  ckpt.meta = r.bytes(r.u64());
  uint64_t n_blocks = r.u64();
  for (uint64_t b = 0; b < n_blocks; ++b) {
    TensorBlock t;
    t.name = r.bytes(r.u32());
    uint32_t rank = r.u32();
    for (uint32_t i = 0; i < rank; ++i) t.dims.push_back(r.u64());
    uint64_t n = t.count();
    t.data.resize(n);
    for (uint64_t i = 0; i < n; ++i) t.data[i] = r.f64();
    ckpt.tensors.push_back(std::move(t));
  }
  if (!r.done())
    throw io_error(path + ": trailing bytes at offset " + std::to_string(r.pos()));
  return ckpt;
}

inline void save_checkpoint_file(const std::string& path, const CheckpointData& ckpt) {
  std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot write checkpoint to " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw io_error("short write to " + path);
}

inline CheckpointData load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path);
}

}  // namespace shiftdiff
