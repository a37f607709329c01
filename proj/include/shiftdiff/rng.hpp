#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "shiftdiff/common.hpp"

namespace shiftdiff {

// Philox4x32-10 counter-based generator (Salmon et al., Random123).
// State is (key, stream, counter); outputs are a pure function of all three,
// so streams can be handed to workers and replayed without shared state.
namespace philox {

constexpr uint32_t kMult0 = 0xD2511F53u;
constexpr uint32_t kMult1 = 0xCD9E8D57u;
constexpr uint32_t kWeyl0 = 0x9E3779B9u;
constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline void round_once(std::array<uint32_t, 4>& c, const std::array<uint32_t, 2>& k) {
  uint64_t p0 = static_cast<uint64_t>(kMult0) * c[0];
  uint64_t p1 = static_cast<uint64_t>(kMult1) * c[2];
  uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
  uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
  c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    round_once(ctr, key);
  }
  return ctr;
}

}  // namespace philox

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Splittable stream over Philox4x32-10: the 64-bit seed is the key, the 64-bit
// stream id occupies the counter's high words, and draws walk the low words.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "philox4x32-10";

  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

  // Deterministic child stream; used for per-chain / per-purpose splits.
  Rng child(uint64_t i) const {
    return Rng(seed_, splitmix64(splitmix64(stream_) ^ (i + 0x9E3779B97F4A7C15ull)));
  }

  uint64_t next_u64() {
    if (buf_pos_ >= 2) refill();
    return buf_[buf_pos_++];
  }

  // Uniform on [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    require(n > 0, "uniform_int: n must be positive");
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    // u1 in (0,1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  void fill_normal(double* p, size_t n) {
    for (size_t i = 0; i < n; ++i) p[i] = normal();
  }

  Vec normal_vec(size_t n) {
    Vec v(n);
    fill_normal(v.data(), n);
    return v;
  }

 private:
  void refill() {
    std::array<uint32_t, 4> ctr = {
        static_cast<uint32_t>(ctr_), static_cast<uint32_t>(ctr_ >> 32),
        static_cast<uint32_t>(stream_), static_cast<uint32_t>(stream_ >> 32)};
    std::array<uint32_t, 2> key = {static_cast<uint32_t>(seed_),
                                   static_cast<uint32_t>(seed_ >> 32)};
    auto out = philox::block(ctr, key);
    buf_[0] = (static_cast<uint64_t>(out[1]) << 32) | out[0];
    buf_[1] = (static_cast<uint64_t>(out[3]) << 32) | out[2];
    buf_pos_ = 0;
    ++ctr_;
  }

  uint64_t seed_ = 0;
  uint64_t stream_ = 0;
  uint64_t ctr_ = 0;
  std::array<uint64_t, 2> buf_{};
  int buf_pos_ = 2;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace shiftdiff
