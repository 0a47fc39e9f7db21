#pragma once

// Seeded randomness. Every stage draws from its own named sub-stream of one
// u64 run seed. The samplers below avoid the std distributions, whose output
// is implementation-defined, so seeded runs reproduce across standard libraries.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>

namespace trajforge {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Stable mix of (seed, stream name, index). Different names or indices give
// statistically independent streams.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0) noexcept;

Rng make_rng(std::uint64_t seed, std::string_view stream, std::uint64_t index = 0);

// Uniform integer in [0, n). n must be > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Uniform integer in [lo, hi], inclusive.
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);

// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

double standard_normal(Rng& rng);

template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace trajforge
