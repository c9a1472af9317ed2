#pragma once

#include <cstdint>
#include <random>

namespace vnd {

// Seedable random source with bit-reproducible output across platforms.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard distributions are not, so uniform and normal draws
// are derived here: uniform() takes the top 53 bits of one engine word and
// normal() uses the Marsaglia polar method.
//
// Streams: Rng(seed, stream) seeds the engine through std::seed_seq with the
// 32-bit halves of (seed, stream). Parallel repetitions, restarts and scan
// candidates use stream = their index, so results do not depend on
// scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform();
  // Uniform on (0, 1).
  double uniform_open();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Seed for a child stream; used when a task needs its own sub-streams.
  std::uint64_t derive_seed() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace vnd
