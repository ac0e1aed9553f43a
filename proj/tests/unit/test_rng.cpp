#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "rsmooth/rng.hpp"

using namespace rsmooth;

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 14695981039346656037ULL);
  CHECK(fnv1a64("a") == 12638187200555641996ULL);
  for (const char* s : {".text", "kernel32.dll:createfilea", "hello world"}) {
    CHECK(fnv1a64(s) == oracle::fnv1a64_ref(s));
  }
}

TEST_CASE("stream is the splitmix64 sequence of its key") {
  Stream s(12345);
  std::uint64_t state = 12345;
  for (int i = 0; i < 16; ++i) {
    state += 0x9e3779b97f4a7c15ULL;
    CHECK(s.next_u64() == mix64(state));
  }
  CHECK(s.position() == 16);
}

TEST_CASE("derived streams are reproducible and separated by every input") {
  auto first = [](std::uint64_t m, const char* id, std::uint64_t i, StreamSalt salt) {
    return Stream::derive(m, id, i, salt).next_u64();
  };
  const auto base = first(1, "x", 0, StreamSalt::kDefense);
  CHECK(base == first(1, "x", 0, StreamSalt::kDefense));
  std::set<std::uint64_t> seen{base, first(2, "x", 0, StreamSalt::kDefense),
                               first(1, "y", 0, StreamSalt::kDefense),
                               first(1, "x", 1, StreamSalt::kDefense),
                               first(1, "x", 0, StreamSalt::kAttack)};
  CHECK(seen.size() == 5);
}

TEST_CASE("uniform and below stay in range") {
  Stream s(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = s.uniform();
    CHECK((u >= 0.0 && u < 1.0));
    CHECK(s.below(13) < 13);
  }
  CHECK(s.below(1) == 0);
}

TEST_CASE("below is close to uniform") {
  Stream s(99);
  std::array<int, 10> counts{};
  constexpr int kDraws = 100000;
  for (int i = 0; i < kDraws; ++i) ++counts[s.below(10)];
  for (int c : counts) CHECK(std::abs(c - kDraws / 10) < 500);
}

TEST_CASE("gaussian moments") {
  Stream s(2024);
  constexpr int kDraws = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const double g = s.gaussian();
    sum += g;
    sq += g * g;
  }
  const double mean = sum / kDraws;
  const double var = sq / kDraws - mean * mean;
  CHECK(std::abs(mean) < 4.0 / std::sqrt(kDraws));
  CHECK(std::abs(var - 1.0) < 0.02);
}
