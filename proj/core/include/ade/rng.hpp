#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ade {

using Rng = std::mt19937_64;

// Derives an independent generator from a root seed and a key path, so that
// e.g. the sampler for (epoch, index) never depends on how many draws other
// consumers made before it.
inline Rng keyed_rng(std::uint64_t root, std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (keys.size() + 1));
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(root);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Stream identifiers for keyed_rng so different consumers never collide.
namespace rng_stream {
inline constexpr std::uint64_t kModelInit = 1;
inline constexpr std::uint64_t kSampler = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kDropout = 4;
inline constexpr std::uint64_t kBackbone = 5;
inline constexpr std::uint64_t kSynthetic = 6;
inline constexpr std::uint64_t kWordVectors = 7;
}  // namespace rng_stream

}  // namespace ade
