#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace bnnvi {

// Counter-based deterministic generator built on the splitmix64 finalizer.
// A stream is (key, counter); drawing advances the counter only, so a stream
// snapshot (value copy) replays the identical sequence.  Child streams are
// keyed by (parent key, purpose tag, index) and never collide with the
// parent's own draws.
class RngState {
 public:
  RngState() = default;
  explicit RngState(std::uint64_t seed) : key_(mix(seed ^ kSeedSalt)) {}

  // Derives an independent child stream.  The tag is a short purpose label
  // ("init", "iter", "split", ...); index distinguishes siblings.
  RngState child(std::string_view tag, std::uint64_t index = 0) const {
    RngState c;
    c.key_ = mix(mix(key_ ^ hash_tag(tag)) ^ index);
    return c;
  }

  std::uint64_t next_u64() { return mix(key_ + kGamma * ++counter_); }

  // Uniform on (0, 1); never returns an exact endpoint.
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via the Marsaglia polar method.  One accepted pair
  // yields one variate; the spare is discarded to keep the state minimal.
  double next_normal() {
    for (;;) {
      const double u = 2.0 * next_uniform() - 1.0;
      const double v = 2.0 * next_uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) {
        return u * std::sqrt(-2.0 * std::log(s) / s);
      }
    }
  }

  std::vector<double> normals(std::size_t n) {
    std::vector<double> out(n);
    for (auto& x : out) x = next_normal();
    return out;
  }

  std::uint64_t key() const { return key_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kSeedSalt = 0x5851F42D4C957F2Dull;

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::uint64_t hash_tag(std::string_view tag) {
    // FNV-1a
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const char c : tag) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ull;
    }
    return h;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

inline std::vector<double> sample_std_normal(RngState& rng, std::size_t n) {
  return rng.normals(n);
}

}  // namespace bnnvi
