#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace msda {

using Rng = std::mt19937_64;

// SplitMix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream `tag` of run `seed`. Distinct tags give statistically independent
// generators; identical (seed, tag) pairs give identical sequences.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t tag) {
  return Rng(mix_seed(seed ^ mix_seed(tag + 0x5bd1e995ULL)));
}

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

}  // namespace msda
