#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include "aot/errors.hpp"
#include "aot/hash.hpp"

namespace aot {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic per-sample random stream (xoshiro256++). Streams are derived
// from (global seed, scope string, index), never from global state, so the
// same sample produces the same draws regardless of worker count or
// processing order. std::random distributions are implementation-defined, so
// bounded draws are done by hand here.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  static RngStream derive(std::uint64_t global_seed, std::string_view scope,
                          std::uint64_t index = 0) {
    std::uint64_t key = fnv1a64(scope);
    key = fnv1a64(global_seed, key);
    key = fnv1a64(index, key);
    return RngStream(key);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_range(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // Uniform in [0, bound). Lemire multiply-shift with rejection.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw ContractViolation("next_below: bound must be > 0");
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * bound;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < bound) {
      const std::uint64_t threshold = -bound % bound;
      while (lo < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * bound;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw ContractViolation("next_int: empty range");
    const auto span = static_cast<std::uint64_t>(hi - lo);
    if (span == UINT64_MAX) return static_cast<std::int64_t>(next_u64());
    return lo + static_cast<std::int64_t>(next_below(span + 1));
  }

  // Index drawn proportionally to non-negative weights.
  std::size_t pick_weighted(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
      if (w < 0.0) throw ContractViolation("pick_weighted: negative weight");
      total += w;
    }
    if (total <= 0.0) throw ContractViolation("pick_weighted: zero total");
    double u = next_double() * total;
    for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
      if (u < weights[i]) return i;
      u -= weights[i];
    }
    return weights.size() - 1;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace aot
