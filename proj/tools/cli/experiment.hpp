#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "cli/config.hpp"
#include "rmfg/roughpath.hpp"
#include "rmfg/rsde.hpp"

namespace rmfg::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitValidation = 2,
  kExitRuntime = 3,
  kExitNotConverged = 4,
};

struct RunOutcome {
  int exit_code = kExitOk;
  std::string hash;
  std::vector<std::string> files;  // relative to the output directory
  bool converged = true;
};

// The common-noise path described by [rough] for a model with rough
// dimension k.
std::shared_ptr<const RoughPath> build_path(const ExperimentConfig& config, std::size_t k);
InitialLaw build_init(const ExperimentConfig& config);

// Runs config.command and writes its artifacts plus manifest.json into
// config.out_dir. Every CSV starts with "# manifest <hash>" and every JSON
// carries a "manifest" field. Errors propagate as exceptions.
RunOutcome run_experiment(const ExperimentConfig& config, std::ostream& log);

void print_models(std::ostream& out);

// Maps an exception from interpret/run to the documented exit code.
int exit_code_for(const std::exception& e);

}  // namespace rmfg::cli
