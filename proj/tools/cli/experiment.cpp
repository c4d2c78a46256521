#include "cli/experiment.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "rmfg/diagnostics.hpp"
#include "rmfg/mfg.hpp"
#include "rmfg/models.hpp"
#include "rmfg/parallel.hpp"
#include "rmfg/randomize.hpp"

#ifndef RMFG_VERSION
#define RMFG_VERSION "unknown"
#endif

namespace rmfg::cli {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using ordered_json = nlohmann::ordered_json;

namespace {

Vec to_vec(const std::vector<double>& v) {
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

class ArtifactWriter {
 public:
  ArtifactWriter(std::filesystem::path dir, std::string hash)
      : dir_(std::move(dir)), hash_(std::move(hash)) {
    std::filesystem::create_directories(dir_);
  }

  template <typename Body>
  void csv(const std::string& name, Body&& body) {
    std::ostringstream text;
    text << "# manifest " << hash_ << '\n';
    body(text);
    write(name, text.str());
  }

  void json(const std::string& name, const ordered_json& payload) {
    ordered_json j;
    j["manifest"] = hash_;
    for (auto it = payload.begin(); it != payload.end(); ++it) j[it.key()] = it.value();
    write(name, j.dump(2) + "\n");
  }

  // Re-parses a writer's JSON so the manifest field can lead it.
  template <typename Writer>
  ordered_json capture(Writer&& writer) {
    std::ostringstream text;
    writer(text);
    return ordered_json::parse(text.str());
  }

  const std::vector<std::string>& files() const { return files_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  void write(const std::string& name, const std::string& text) {
    std::ofstream out(dir_ / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir_ / name).string());
    out << text;
    files_.push_back(name);
  }

  std::filesystem::path dir_;
  std::string hash_;
  std::vector<std::string> files_;
};

std::shared_ptr<const RelaxedPolicy> uniform_policy(const TimeGrid& grid,
                                                    const ExperimentConfig& c,
                                                    std::size_t state_dim) {
  const std::vector<double> probs(c.actions.size(), 1.0 / static_cast<double>(c.actions.size()));
  return std::make_shared<const RelaxedPolicy>(
      RelaxedPolicy::constant(grid, c.actions, probs, state_dim));
}

ordered_json norm_json(const NormEstimate& e) {
  return {{"delta", e.delta_z_norm},
          {"derivative", e.zp_norm},
          {"remainder", e.remainder_norm},
          {"combined", e.combined},
          {"lower_bound_mode", e.lower_bound_mode}};
}

NormSettings norm_settings(const ExperimentConfig& c) {
  NormSettings s;
  s.index = c.index;
  s.m = c.m;
  s.seed = c.seed;
  return s;
}

void run_rsde(const ExperimentConfig& c, std::ostream& log, ArtifactWriter& out) {
  const auto model = make_model(c.model, c.overrides);
  const auto path = build_path(c, model->dims.rough);
  const TimeGrid& grid = path->grid();
  SolveOptions opt;
  opt.particles = c.particles;
  opt.seed = c.seed;
  opt.init = build_init(c);
  auto flow = std::make_shared<const MeasureFlow>(MeasureFlow::constant(
      grid, opt.init.sample_cloud(c.particles, c.seed), model->dims.rough));
  log << "solving " << c.model << " with " << c.particles << " particles on " << grid.steps()
      << " steps\n";
  const RsdeSolution sol = solve(make_environment(model, flow, path),
                                 uniform_policy(grid, c, model->dims.state), opt);

  DiagnosticsSettings ds;
  ds.level = c.diagnostics_level;
  const MartingaleDiagnostics diag = martingale_diagnostics(
      sol, default_battery(model->dims.state, model->dims.noise), ds);
  MonitorSettings ms;
  ms.norm = norm_settings(c);
  const AprioriSnapshot snap = apriori_monitor(sol, ms);
  log << "martingale diagnostics " << (diag.all_pass() ? "pass" : "FAIL") << ", a priori monitor "
      << (snap.flagged ? "FLAGGED" : "within envelope") << '\n';

  out.csv("summary.csv", [&](std::ostream& s) { write_summary_csv(sol, s); });
  out.csv("rough.csv", [&](std::ostream& s) { write_first_level_csv(*path, s); });
  ordered_json d;
  d["command"] = c.command;
  d["model"] = c.model;
  d["seed"] = c.seed;
  d["martingale"] = out.capture([&](std::ostream& s) { write_diagnostics_json(diag, s); });
  d["apriori"] = {{"state", norm_json(snap.state)},
                  {"field", norm_json(snap.field)},
                  {"cvf_total", snap.cvf.total},
                  {"envelope", snap.envelope},
                  {"flagged", snap.flagged}};
  out.json("diagnostics.json", d);
}

bool run_mfg(const ExperimentConfig& c, std::ostream& log, ArtifactWriter& out) {
  const auto model = make_model(c.model, c.overrides);
  const auto path = build_path(c, model->dims.rough);
  FixedPointSettings s;
  s.actions = c.actions;
  s.init = build_init(c);
  s.dp.quadrature = c.quadrature;
  s.dp.strict = c.strict;
  if (!c.lattice_lower.empty()) {
    s.dp.lattice = StateLattice(to_vec(c.lattice_lower), to_vec(c.lattice_upper),
                                std::vector<std::size_t>(c.lattice_lower.size(), c.lattice_nodes));
  }
  s.lattice_nodes_per_dim = c.lattice_nodes;
  s.pilot_particles = c.pilot_particles;
  s.particles = c.particles;
  s.damping = c.damping;
  s.max_iters = c.max_iters;
  s.tol_w2 = c.tol_w2;
  s.tol_exp = c.tol_exp;
  s.domain.M_bound = c.M_bound;
  s.domain.epsilon = c.epsilon;
  s.domain.norm = norm_settings(c);
  s.seed = c.seed;
  log << "fixed point for " << c.model << " (" << c.particles << " particles, "
      << path->grid().steps() << " steps)\n";
  const FixedPointResult r = fixed_point(model, path, s);
  for (const IterationRecord& rec : r.report.records) {
    log << "  iteration " << rec.iteration << ": W2 update " << rec.w2_update
        << ", exploitability " << rec.exploit.raw << " +- " << rec.exploit.std_error << '\n';
    for (const std::string& w : rec.warnings) log << "  warning: " << w << '\n';
  }
  log << (r.report.converged ? "converged" : "did not converge") << " after "
      << r.report.iterations << " iterations\n";

  ordered_json report = out.capture([&](std::ostream& o) { write_report_json(r.report, o); });
  report["seed"] = c.seed;
  out.json("report.json", report);
  out.csv("iterations.csv", [&](std::ostream& o) { write_iterations_csv(r.report, o); });
  out.csv("policy.csv", [&](std::ostream& o) { r.policy->write_table_csv(o); });
  out.csv("summary.csv", [&](std::ostream& o) { write_summary_csv(*r.solution, o); });
  return r.report.converged;
}

void run_randomize(const ExperimentConfig& c, std::ostream& log, ArtifactWriter& out) {
  const auto model = make_model(c.model, c.overrides);
  const TimeGrid grid(c.horizon, c.steps);
  CompareSettings s;
  s.samples = c.samples;
  s.particles = c.particles;
  s.seed = c.seed;
  s.mode = parse_compare_mode(c.mode);
  s.init = build_init(c);
  s.inner_iterations = c.inner_iterations;
  s.refine = c.rough_refine;
  s.permutations = c.permutations;
  s.level = c.diagnostics_level;
  log << "comparing pathwise and randomized pipelines: " << c.samples << " samples x "
      << c.particles << " particles, mode " << c.mode << '\n';
  const CompareReport r = compare_pathwise_vs_randomized(
      model, uniform_policy(grid, c, model->dims.state), grid, s);
  log << "pooled moments max |z| = " << r.max_abs_z << ", conditional-law p = "
      << r.conditional_test.p_value << " -> " << (r.pass() ? "agree" : "DISAGREE") << '\n';
  ordered_json report = out.capture([&](std::ostream& o) { write_compare_json(r, o); });
  report["seed"] = c.seed;
  out.json("compare.json", report);
  out.csv("conditional.csv", [&](std::ostream& o) { write_conditional_csv(r, o); });
}

}  // namespace

std::shared_ptr<const RoughPath> build_path(const ExperimentConfig& c, std::size_t k) {
  const TimeGrid grid(c.horizon, c.steps);
  if (c.rough_source == "file") {
    auto p = std::make_shared<const RoughPath>(load_binary(c.rough_file));
    if (p->grid().steps() != c.steps || p->grid().horizon() != c.horizon ||
        p->dim() != k) {
      std::ostringstream msg;
      msg << "rough file '" << c.rough_file << "' has T = " << p->grid().horizon()
          << ", N = " << p->grid().steps() << ", k = " << p->dim() << " but the config asks for T = "
          << c.horizon << ", N = " << c.steps << ", k = " << k;
      throw InputError(msg.str());
    }
    return p;
  }
  if (c.rough_source == "smooth") {
    Mat nodes(grid.nodes(), k);
    for (std::size_t n = 0; n < grid.nodes(); ++n) {
      const double t = grid.time(n);
      for (std::size_t a = 0; a < k; ++a) {
        nodes(n, a) = c.smooth_amplitude[a] * std::sin(c.smooth_frequency[a] * t) +
                      c.smooth_drift[a] * t;
      }
    }
    return std::make_shared<const RoughPath>(smooth_lift(nodes, grid));
  }
  return std::make_shared<const RoughPath>(sample_lift(grid, k, c.rough_seed, c.rough_refine));
}

InitialLaw build_init(const ExperimentConfig& c) {
  if (c.init_kind == "point") return InitialLaw::point(to_vec(c.init_mean));
  return InitialLaw::gaussian(to_vec(c.init_mean), to_vec(c.init_stddev));
}

RunOutcome run_experiment(const ExperimentConfig& c, std::ostream& log) {
  const auto start = std::chrono::steady_clock::now();
  set_thread_count(c.threads);
  RunOutcome outcome;
  outcome.hash = config_hash(c);
  ArtifactWriter out(c.out_dir, outcome.hash);
  if (c.command == "rsde solve") {
    run_rsde(c, log, out);
  } else if (c.command == "mfg solve") {
    outcome.converged = run_mfg(c, log, out);
    if (!outcome.converged && c.strict) outcome.exit_code = kExitNotConverged;
  } else if (c.command == "randomize compare") {
    run_randomize(c, log, out);
  } else {
    throw InputError("unknown command '" + c.command + "'");
  }
  outcome.files = out.files();

  ordered_json m;
  m["tool"] = "rmfg";
  m["version"] = RMFG_VERSION;
  m["command"] = c.command;
  m["model"] = c.model;
  m["seed"] = c.seed;
  m["threads"] = thread_count();
  ordered_json cfg = ordered_json::object();
  for (const auto& [k, v] : effective_entries(c)) cfg[k] = v;
  m["config"] = cfg;
  m["files"] = outcome.files;
  m["exit_code"] = outcome.exit_code;
  m["wall_time_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.json("manifest.json", m);
  outcome.files.push_back("manifest.json");
  return outcome;
}

void print_models(std::ostream& out) {
  for (const ModelInfo& info : list_models()) {
    out << info.name << "\n  " << info.description << '\n';
    for (const ModelParameter& p : info.parameters) {
      out << "    " << std::left << std::setw(12) << p.name << " = " << std::setw(6) << p.value
          << "  " << p.help << '\n';
    }
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const InputError*>(&e)) return kExitValidation;
  return kExitRuntime;
}

}  // namespace rmfg::cli
