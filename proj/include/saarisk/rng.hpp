#pragma once

#include <cstdint>
#include <random>

namespace saarisk {

// splitmix64 finalizer: a bijection on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream id for replication `rep` of design point `n_index`. For rep < 2^32
// the map (n_index, rep) -> id is injective, so streams never collide.
constexpr std::uint64_t mix64(std::uint64_t base_seed, std::uint64_t n_index,
                              std::uint64_t rep) noexcept {
  return splitmix64(splitmix64(base_seed) ^ ((n_index << 32) | (rep & 0xffffffffULL)));
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t stream_id) : engine_(stream_id) {}

  // Uniform on the open interval (0, 1), 53 bits.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace saarisk
