#pragma once

#include <array>
#include <cstdint>

namespace rmfg {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every draw is
// a pure function of (key, counter), so parallel schedules cannot change
// results.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter counter, Key key);
};

// Subsystems that draw randomness. Part of every stream key.
enum class StreamModule : std::uint32_t {
  kInitial = 1,
  kIdiosyncratic = 2,
  kAction = 3,
  kCommon = 4,
  kResample = 5,
  kMix = 6,
  kPermutation = 7,
  kProjection = 8,
  kPilot = 9,
  kJoint = 10,
  kTest = 99,
};

// A reproducible stream addressed by (seed, module, entity, step).
// Draw j of the stream is Philox(counter = {entity_lo, entity_hi ^ module,
// step, j / 4}, key = seed)[j % 4]; draws never depend on call order.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, StreamModule module, std::uint64_t entity,
               std::uint64_t step = 0);

  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  std::uint32_t next_u32();

  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

 private:
  void refill();

  Philox4x32::Key key_;
  Philox4x32::Counter base_;
  std::uint32_t block_ = 0;
  Philox4x32::Counter buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes several 64-bit words into one (splitmix64 finalizer chain).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace rmfg
