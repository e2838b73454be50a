#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>

namespace relstack {

/// Deterministic, serializable PRNG (splitmix64 core, Box-Muller normals).
/// Every randomness consumer in the system owns its own stream, derived
/// from the root seed with mix(), so runs are reproducible stream by stream.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Derives an independent stream seed from a parent seed and a tag.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  void save(std::ostream& os) const {
    os << state_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
    os.write(reinterpret_cast<const char*>(&spare_), sizeof(spare_));
  }

  void load(std::istream& is) {
    int spare_flag = 0;
    is >> state_ >> spare_flag;
    is.get();  // separator
    is.read(reinterpret_cast<char*>(&spare_), sizeof(spare_));
    has_spare_ = spare_flag != 0;
  }

  bool operator==(const Rng& other) const {
    return state_ == other.state_ && has_spare_ == other.has_spare_ &&
           (!has_spare_ || spare_ == other.spare_);
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace relstack
