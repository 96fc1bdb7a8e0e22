#pragma once

#include <cstdint>
#include <random>

namespace finetag {

// Stream-splitting rule: every subsystem that consumes randomness derives its
// own engine from (base seed, stream tag) through std::seed_seq, so one CLI
// --seed fans out deterministically. Tags are fixed constants, never reused.
namespace seed_stream {
inline constexpr std::uint32_t kSplitSampling = 1;
inline constexpr std::uint32_t kLocationSampling = 2;
inline constexpr std::uint32_t kIcaInit = 3;
inline constexpr std::uint32_t kParamInit = 4;
inline constexpr std::uint32_t kShuffle = 5;
}  // namespace seed_stream

inline std::uint64_t derive_seed(std::uint64_t base, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(base),
                    static_cast<std::uint32_t>(base >> 32), stream};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (std::uint64_t(out[1]) << 32) | out[0];
}

inline std::mt19937_64 seeded_rng(std::uint64_t base, std::uint32_t stream) {
  return std::mt19937_64(derive_seed(base, stream));
}

}  // namespace finetag
