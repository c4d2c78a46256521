#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cli/config.hpp"
#include "cli/experiment.hpp"

namespace {

using rmfg::cli::ExitCode;
using rmfg::cli::RawConfig;

struct Flags {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool strict = false;
  std::optional<std::string> model;
  std::optional<std::size_t> grid;
  std::optional<std::size_t> particles;
  std::optional<std::size_t> samples;
  std::optional<std::string> rough;
  std::optional<std::string> mode;
};

void apply_flags(const Flags& f, RawConfig& raw) {
  auto set = [&](const char* key, const std::string& value, const char* flag) {
    raw.set(key, value, std::string("flag ") + flag);
  };
  if (f.out) set("run.out", *f.out, "--out");
  if (f.seed) set("run.seed", std::to_string(*f.seed), "--seed");
  if (f.threads) set("run.threads", std::to_string(*f.threads), "--threads");
  if (f.strict) set("run.strict", "true", "--strict");
  if (f.model) set("model.name", *f.model, "--model");
  if (f.grid) set("grid.n", std::to_string(*f.grid), "--grid");
  if (f.particles) set("particles.count", std::to_string(*f.particles), "--particles");
  if (f.samples) set("randomize.samples", std::to_string(*f.samples), "--samples");
  if (f.mode) set("randomize.mode", *f.mode, "--mode");
  if (f.rough) {
    if (*f.rough == "sample") {
      set("rough.source", "sample", "--rough");
    } else {
      set("rough.source", "file", "--rough");
      set("rough.file", *f.rough, "--rough");
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pathwise mean-field games with rough common noise"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  app.add_option("--config", flags.config, "INI configuration file");
  app.add_option("--out", flags.out, "Output directory");
  app.add_option("--seed", flags.seed, "Global seed");
  app.add_option("--threads", flags.threads, "Worker threads (0: library default)");
  app.add_flag("--strict", flags.strict,
               "Escalate lattice warnings to errors and non-convergence to exit code 4");

  auto* rsde = app.add_subcommand("rsde", "Rough SDE solver");
  rsde->require_subcommand(1);
  rsde->fallthrough();
  auto* rsde_solve = rsde->add_subcommand("solve", "Solve against the frozen initial-law flow");
  rsde_solve->fallthrough();
  rsde_solve->add_option("--model", flags.model, "Registered model name");
  rsde_solve->add_option("--grid", flags.grid, "Number of time steps N");
  rsde_solve->add_option("--particles", flags.particles, "Particles P");
  rsde_solve->add_option("--rough", flags.rough, "Rough path file, or 'sample'");

  auto* mfg = app.add_subcommand("mfg", "Mean-field equilibrium search");
  mfg->require_subcommand(1);
  mfg->fallthrough();
  auto* mfg_solve = mfg->add_subcommand("solve", "Damped fixed-point iteration with certificates");
  mfg_solve->fallthrough();
  mfg_solve->add_option("--model", flags.model, "Registered model name");
  mfg_solve->add_option("--grid", flags.grid, "Number of time steps N");
  mfg_solve->add_option("--particles", flags.particles, "Particles P");

  auto* randomize = app.add_subcommand("randomize", "Pathwise versus two-Brownian comparison");
  randomize->require_subcommand(1);
  randomize->fallthrough();
  auto* compare = randomize->add_subcommand("compare", "Compare both pipelines statistically");
  compare->fallthrough();
  compare->add_option("--model", flags.model, "Registered model name");
  compare->add_option("--samples", flags.samples, "Common-noise samples S");
  compare->add_option("--particles", flags.particles, "Particles per sample P");
  compare->add_option("--mode", flags.mode, "frozen-flow or per-sample-fixedpoint")
      ->check(CLI::IsMember({"frozen-flow", "per-sample-fixedpoint"}));

  auto* run = app.add_subcommand("run", "Run the command named in [run] of --config");
  run->fallthrough();
  auto* list = app.add_subcommand("list-models", "List registered models and defaults");
  auto* validate = app.add_subcommand("validate", "Check a configuration without running it");
  validate->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kExitValidation);
  }

  if (list->parsed()) {
    rmfg::cli::print_models(std::cout);
    return 0;
  }
  if ((run->parsed() || validate->parsed()) && flags.config.empty()) {
    std::cerr << "error: --config is required\n";
    return ExitCode::kExitValidation;
  }

  try {
    RawConfig raw = flags.config.empty() ? RawConfig() : RawConfig::from_file(flags.config);
    raw.apply_environment();
    apply_flags(flags, raw);
    if (rsde_solve->parsed()) raw.set("run.command", "rsde solve", "subcommand");
    if (mfg_solve->parsed()) raw.set("run.command", "mfg solve", "subcommand");
    if (compare->parsed()) raw.set("run.command", "randomize compare", "subcommand");

    const rmfg::cli::LoadedConfig loaded = rmfg::cli::interpret(raw);
    if (validate->parsed()) {
      for (const auto& [key, value] : rmfg::cli::effective_entries(loaded.config)) {
        std::cout << key << " = " << value << '\n';
      }
    }
    if (!loaded.issues.empty()) {
      for (const auto& issue : loaded.issues) {
        std::cerr << "error: " << rmfg::cli::to_string(issue) << '\n';
      }
      return ExitCode::kExitValidation;
    }
    if (validate->parsed()) {
      std::cout << "# no issues\n";
      return 0;
    }
    const rmfg::cli::RunOutcome outcome = rmfg::cli::run_experiment(loaded.config, std::cerr);
    std::cout << "manifest " << outcome.hash << '\n';
    for (const std::string& f : outcome.files) std::cout << loaded.config.out_dir << '/' << f << '\n';
    return outcome.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return rmfg::cli::exit_code_for(e);
  }
}
