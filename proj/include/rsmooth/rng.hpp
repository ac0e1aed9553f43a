#pragma once

#include <cstdint>
#include <string_view>

namespace rsmooth {

// Stream salts keep the randomness of independent consumers apart even when
// they share (master_seed, sample_id, index).
enum class StreamSalt : std::uint64_t {
  kDefense = 0x6465666e6365ULL,   // masks + noise of the smoothing distribution
  kAttack = 0x61747461636bULL,    // attacker group selection + noise
  kMetamorphic = 0x6d6574616dULL,
  kSynth = 0x73796e7468ULL,
  kSplit = 0x73706c6974ULL,
  kSearch = 0x736561726368ULL,
  kSearchFinal = 0x66696e616cULL,
};

std::uint64_t fnv1a64(std::string_view s) noexcept;

// SplitMix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based generator: output i is mix64(key + (i + 1) * golden gamma).
// This is exactly the SplitMix64 sequence started at `key`, so every stream is
// fully determined by its 64-bit key and draws can be regenerated at any
// position. Gaussian draws use Box-Muller on 53-bit uniforms; the sequence is
// therefore identical on every platform and standard library.
class Stream {
 public:
  explicit Stream(std::uint64_t key) noexcept : key_(key) {}

  // Key derivation: mix of (master_seed, fnv1a64(sample_id), index, salt).
  static Stream derive(std::uint64_t master_seed, std::string_view sample_id,
                       std::uint64_t index, StreamSalt salt) noexcept;

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  // Unbiased integer in [0, bound); bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;
  double gaussian() noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace rsmooth
