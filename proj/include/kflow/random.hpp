#pragma once
#include <cmath>
#include <cstdint>
#include <vector>

namespace kflow {

// Counter-based deterministic random stream. Every draw is a hash of
// (seed, stream-id, counter), so sequences are bit-identical across runs and
// platforms, and a stream can be forked without sharing state. A normal draw
// always consumes exactly two counter increments.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_(stream_id) {
    key_ = mix64(seed + 0x9e3779b97f4a7c15ull * (stream_id + 1));
    key2_ = mix64(key_ ^ 0xd1b54a32d192ed03ull);
  }

  std::uint64_t next_u64() {
    std::uint64_t x = key_ + 0xbf58476d1ce4e5b9ull * ++counter_;
    return mix64(x ^ key2_);
  }

  // uniform on the open interval (0,1)
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  std::vector<double> normals(std::size_t count) {
    std::vector<double> out(count);
    for (auto& v : out) v = normal();
    return out;
  }

  // unbiased integer in [0, n)
  std::uint64_t uniform_below(std::uint64_t n) {
    std::uint64_t lim = ~0ull - ~0ull % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= lim);
    return x % n;
  }

  long uniform_int(long n) { return static_cast<long>(uniform_below(static_cast<std::uint64_t>(n))); }

  // derive an independent stream; tags must be distinct per parent stream
  RandomStream sub(std::uint64_t tag) const {
    std::uint64_t sid = mix64(stream_ * 0x94d049bb133111ebull + 0x9e3779b97f4a7c15ull * (tag + 1));
    return RandomStream(seed_, sid);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_ = 0;
  std::uint64_t key2_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace kflow
