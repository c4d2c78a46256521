#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rmfg {

// Malformed or inconsistent arguments: shape mismatches, non-finite data.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A component was assembled without something it needs (e.g. no derivative
// particles on a flow that feeds a vector-field construction).
class ConfigurationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergedError : public NumericError {
 public:
  DivergedError(std::size_t step, std::size_t particle, double value)
      : NumericError("state diverged at step " + std::to_string(step) +
                     " (particle " + std::to_string(particle) +
                     ", |x| = " + std::to_string(value) + ")"),
        step_(step),
        particle_(particle) {}

  std::size_t step() const { return step_; }
  std::size_t particle() const { return particle_; }

 private:
  std::size_t step_;
  std::size_t particle_;
};

// An open-loop policy tried to read idiosyncratic noise beyond its prefix.
class CausalityViolation : public std::runtime_error {
 public:
  CausalityViolation(std::size_t step, std::size_t requested)
      : std::runtime_error("policy at step " + std::to_string(step) +
                           " requested W increment " +
                           std::to_string(requested) +
                           " which lies in its future"),
        step_(step),
        requested_(requested) {}

  std::size_t step() const { return step_; }
  std::size_t requested() const { return requested_; }

 private:
  std::size_t step_;
  std::size_t requested_;
};

}  // namespace rmfg
