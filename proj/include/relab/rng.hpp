#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

namespace relab {

// Bit-stable generator (splitmix64). Generated passages and injection
// positions are part of the persisted-instance contract, so draws must not
// depend on the standard library's distribution implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n); n >= 1. Rejection sampling, no modulo bias.
  uint64_t bounded(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

 private:
  uint64_t state_;
};

// FNV-1a, 64-bit.
inline uint64_t fnv1a64(std::string_view bytes,
                        uint64_t h = 0xCBF29CE484222325ull) {
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

// Stable seed from string parts. Parts are joined with a 0x1F separator so
// ("ab","c") and ("a","bc") hash differently.
inline uint64_t stable_seed(std::initializer_list<std::string_view> parts) {
  uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& part : parts) {
    h = fnv1a64(part, h);
    h = fnv1a64(std::string_view("\x1f", 1), h);
  }
  return h;
}

inline std::string seed_hex(uint64_t seed) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[seed & 0xF];
    seed >>= 4;
  }
  return out;
}

}  // namespace relab
