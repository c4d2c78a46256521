#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rmfg/controlled.hpp"
#include "rmfg/errors.hpp"

namespace rmfg::cli {

// Syntax error in a config file, with the offending line.
class ConfigParseError : public InputError {
 public:
  ConfigParseError(const std::string& file, std::size_t line, const std::string& what)
      : InputError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct ConfigEntry {
  std::string value;
  std::string origin;  // "file.ini:12", "env RMFG_GRID_N", "flag --seed"
};

// Flat "section.key" → value map with provenance. Later sources override
// earlier ones: file, then environment, then command-line flags.
class RawConfig {
 public:
  static RawConfig from_file(const std::string& path);
  static RawConfig from_string(const std::string& text, const std::string& name = "<config>");

  void set(const std::string& key, const std::string& value, const std::string& origin);
  // RMFG_<SECTION>_<KEY>=value for every matching variable in `environ`.
  void apply_environment(const std::string& prefix = "RMFG_");

  const ConfigEntry* find(const std::string& key) const;
  const std::map<std::string, ConfigEntry>& entries() const { return entries_; }

 private:
  std::map<std::string, ConfigEntry> entries_;
};

struct Issue {
  std::string key;
  std::string origin;
  std::string message;
};
std::string to_string(const Issue& issue);

struct ExperimentConfig {
  std::string command = "mfg solve";  // rsde solve | mfg solve | randomize compare

  std::string model = "lq";
  std::map<std::string, double> overrides;

  double horizon = 1.0;
  std::size_t steps = 32;

  std::string rough_source = "sample";  // sample | file | smooth
  std::uint64_t rough_seed = 1;
  std::size_t rough_refine = 1;
  std::string rough_file;
  // smooth: B^a_t = amplitude_a sin(frequency_a t) + drift_a t
  std::vector<double> smooth_amplitude{1.0};
  std::vector<double> smooth_frequency{3.0};
  std::vector<double> smooth_drift{0.0};

  std::string init_kind = "gaussian";  // point | gaussian
  std::vector<double> init_mean{0.0};
  std::vector<double> init_stddev{0.5};

  std::size_t particles = 2000;
  std::size_t pilot_particles = 500;

  IndexPair index;
  int m = 4;
  double alpha = 0.45;
  double gamma = 2.0;

  std::vector<Eigen::VectorXd> actions;  // default {−1, −½, 0, ½, 1}
  std::size_t lattice_nodes = 41;
  std::vector<double> lattice_lower, lattice_upper;  // empty: automatic
  std::size_t quadrature = 5;

  double damping = 1.0;
  double tol_w2 = 1e-2;
  double tol_exp = 1e-2;
  std::size_t max_iters = 20;

  double M_bound = 5.0;
  double epsilon = 0.25;

  std::size_t samples = 200;
  std::string mode = "frozen-flow";
  std::size_t permutations = 500;
  std::size_t inner_iterations = 5;

  double diagnostics_level = 0.01;

  std::uint64_t seed = 0;
  int threads = 0;
  bool strict = false;
  std::string out_dir = "out";
};

struct LoadedConfig {
  ExperimentConfig config;
  std::vector<Issue> issues;  // conversion, unknown-key and invariant failures
};

// Typed view of a raw config plus every issue found; never throws for bad
// values.
LoadedConfig interpret(const RawConfig& raw);

// Invariant checks on a typed config (model registry, index set, ranges).
std::vector<Issue> validate(const ExperimentConfig& config);

// Every key with its effective value, defaults included, "section.key = v".
std::vector<std::pair<std::string, std::string>> effective_entries(
    const ExperimentConfig& config);

// SHA-256 of the effective entries that influence results (excludes the
// output directory and the thread count).
std::string config_hash(const ExperimentConfig& config);

}  // namespace rmfg::cli
