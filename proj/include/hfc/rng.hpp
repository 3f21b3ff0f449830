#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace hfc {

using Rng = std::mt19937_64;

/// Seed of the named stream `stream` under `base`. Every random draw in a run
/// goes through one of these streams ("dataset", "init", "batching", ...).
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);
Rng make_rng(std::uint64_t base, std::string_view stream);

/// Uniform in [0, 1) from the top 53 bits.
double uniform01(Rng& rng);
/// Box-Muller; implemented here so draws do not depend on the standard
/// library's distribution code.
double standard_normal(Rng& rng);
double normal(Rng& rng, double mean, double stddev);
/// Uniform integer in [0, bound).
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);

template <typename T>
void shuffle(std::vector<T>& values, Rng& rng) {
  for (std::size_t i = values.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(values[i - 1], values[j]);
  }
}

}  // namespace hfc
