#include "cli/config.hpp"

#include <openssl/evp.h>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "rmfg/models.hpp"
#include "rmfg/randomize.hpp"

extern char** environ;

namespace rmfg::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Line of every "key = value" inside its section, for error messages.
std::map<std::string, std::size_t> key_lines(std::istream& in) {
  std::map<std::string, std::size_t> lines;
  std::string line, section;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq != std::string::npos) lines[section + "." + trim(t.substr(0, eq))] = n;
  }
  return lines;
}

RawConfig from_stream(std::istream& in, const std::string& name) {
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  boost::property_tree::ptree tree;
  std::istringstream parse_in(text);
  try {
    boost::property_tree::read_ini(parse_in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigParseError(name, e.line(), e.message());
  }
  std::istringstream scan_in(text);
  const auto lines = key_lines(scan_in);
  RawConfig raw;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      const auto it = lines.find("." + section);
      throw ConfigParseError(name, it == lines.end() ? 0 : it->second,
                             "key '" + section + "' must belong to a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string full = lower(section) + "." + lower(key);
      const auto it = lines.find(section + "." + key);
      raw.set(full, trim(value.data()),
              name + ":" + std::to_string(it == lines.end() ? 0 : it->second));
    }
  }
  return raw;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

std::string format_actions(const std::vector<Eigen::VectorXd>& actions) {
  std::string out;
  bool scalar = true;
  for (const auto& a : actions) scalar = scalar && a.size() == 1;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (i) out += scalar ? "," : ";";
    out += format_list(std::vector<double>(actions[i].data(),
                                           actions[i].data() + actions[i].size()));
  }
  return out;
}

// Parsers return an error message, empty on success.
std::string parse_double(const std::string& s, double& out) {
  const std::string t = trim(s);
  const char* end = t.data() + t.size();
  const auto r = std::from_chars(t.data(), end, out);
  if (t.empty() || r.ec != std::errc() || r.ptr != end) return "expected a number, got '" + s + "'";
  if (!std::isfinite(out)) return "expected a finite number, got '" + s + "'";
  return "";
}

template <typename Int>
std::string parse_int(const std::string& s, Int& out) {
  const std::string t = trim(s);
  const char* end = t.data() + t.size();
  const auto r = std::from_chars(t.data(), end, out);
  if (t.empty() || r.ec != std::errc() || r.ptr != end) {
    return "expected a non-negative integer, got '" + s + "'";
  }
  return "";
}

std::string parse_bool(const std::string& s, bool& out) {
  const std::string t = lower(trim(s));
  if (t == "true" || t == "1" || t == "yes" || t == "on") {
    out = true;
  } else if (t == "false" || t == "0" || t == "no" || t == "off") {
    out = false;
  } else {
    return "expected true or false, got '" + s + "'";
  }
  return "";
}

std::string parse_list(const std::string& s, std::vector<double>& out) {
  out.clear();
  if (trim(s).empty()) return "";
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    double v = 0.0;
    if (auto err = parse_double(item, v); !err.empty()) return err;
    out.push_back(v);
  }
  return "";
}

// "−1, 0, 1" lists scalar actions; "0.5,0; −0.5,0" separates vector actions
// with semicolons.
std::string parse_actions(const std::string& s, std::vector<Eigen::VectorXd>& out) {
  out.clear();
  if (s.find(';') == std::string::npos) {
    std::vector<double> v;
    if (auto err = parse_list(s, v); !err.empty()) return err;
    for (double x : v) out.push_back(Eigen::VectorXd::Constant(1, x));
    return "";
  }
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ';')) {
    std::vector<double> v;
    if (auto err = parse_list(item, v); !err.empty()) return err;
    out.push_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return "";
}

struct Field {
  std::string key;
  std::function<std::string(const std::string&, ExperimentConfig&)> parse;
  std::function<std::string(const ExperimentConfig&)> print;
  bool affects_results = true;
};

template <typename T>
Field int_field(std::string key, T ExperimentConfig::*member) {
  return {key, [member](const std::string& s, ExperimentConfig& c) { return parse_int(s, c.*member); },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(std::string key, double ExperimentConfig::*member) {
  return {key,
          [member](const std::string& s, ExperimentConfig& c) { return parse_double(s, c.*member); },
          [member](const ExperimentConfig& c) { return format_double(c.*member); }};
}

Field list_field(std::string key, std::vector<double> ExperimentConfig::*member) {
  return {key,
          [member](const std::string& s, ExperimentConfig& c) { return parse_list(s, c.*member); },
          [member](const ExperimentConfig& c) { return format_list(c.*member); }};
}

Field string_field(std::string key, std::string ExperimentConfig::*member) {
  return {key,
          [member](const std::string& s, ExperimentConfig& c) {
            c.*member = trim(s);
            return std::string();
          },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        string_field("run.command", &ExperimentConfig::command),
        int_field("run.seed", &ExperimentConfig::seed),
        string_field("model.name", &ExperimentConfig::model),
        double_field("grid.t", &ExperimentConfig::horizon),
        int_field("grid.n", &ExperimentConfig::steps),
        string_field("rough.source", &ExperimentConfig::rough_source),
        int_field("rough.seed", &ExperimentConfig::rough_seed),
        int_field("rough.refine", &ExperimentConfig::rough_refine),
        string_field("rough.file", &ExperimentConfig::rough_file),
        list_field("rough.amplitude", &ExperimentConfig::smooth_amplitude),
        list_field("rough.frequency", &ExperimentConfig::smooth_frequency),
        list_field("rough.drift", &ExperimentConfig::smooth_drift),
        string_field("init.kind", &ExperimentConfig::init_kind),
        list_field("init.mean", &ExperimentConfig::init_mean),
        list_field("init.stddev", &ExperimentConfig::init_stddev),
        int_field("particles.count", &ExperimentConfig::particles),
        int_field("particles.pilot", &ExperimentConfig::pilot_particles),
        {"index.beta",
         [](const std::string& s, ExperimentConfig& c) { return parse_double(s, c.index.beta); },
         [](const ExperimentConfig& c) { return format_double(c.index.beta); }},
        {"index.beta_prime",
         [](const std::string& s, ExperimentConfig& c) {
           return parse_double(s, c.index.beta_prime);
         },
         [](const ExperimentConfig& c) { return format_double(c.index.beta_prime); }},
        int_field("index.m", &ExperimentConfig::m),
        double_field("index.alpha", &ExperimentConfig::alpha),
        double_field("index.gamma", &ExperimentConfig::gamma),
        {"policy.actions",
         [](const std::string& s, ExperimentConfig& c) { return parse_actions(s, c.actions); },
         [](const ExperimentConfig& c) { return format_actions(c.actions); }},
        int_field("policy.lattice_nodes", &ExperimentConfig::lattice_nodes),
        list_field("policy.lattice_lower", &ExperimentConfig::lattice_lower),
        list_field("policy.lattice_upper", &ExperimentConfig::lattice_upper),
        int_field("policy.quadrature", &ExperimentConfig::quadrature),
        double_field("fixedpoint.damping", &ExperimentConfig::damping),
        double_field("fixedpoint.tol_w2", &ExperimentConfig::tol_w2),
        double_field("fixedpoint.tol_exp", &ExperimentConfig::tol_exp),
        int_field("fixedpoint.max_iters", &ExperimentConfig::max_iters),
        double_field("domain.m_bound", &ExperimentConfig::M_bound),
        double_field("domain.epsilon", &ExperimentConfig::epsilon),
        int_field("randomize.samples", &ExperimentConfig::samples),
        string_field("randomize.mode", &ExperimentConfig::mode),
        int_field("randomize.permutations", &ExperimentConfig::permutations),
        int_field("randomize.inner_iterations", &ExperimentConfig::inner_iterations),
        double_field("diagnostics.level", &ExperimentConfig::diagnostics_level),
    };
    f.push_back({"run.strict",
                 [](const std::string& s, ExperimentConfig& c) { return parse_bool(s, c.strict); },
                 [](const ExperimentConfig& c) { return std::string(c.strict ? "true" : "false"); }});
    Field threads = int_field("run.threads", &ExperimentConfig::threads);
    threads.affects_results = false;
    f.push_back(threads);
    Field out = string_field("run.out", &ExperimentConfig::out_dir);
    out.affects_results = false;
    f.push_back(out);
    return f;
  }();
  return table;
}

std::optional<std::string> nearest_key(const std::string& key) {
  std::optional<std::string> best;
  std::size_t best_d = 4;
  for (const Field& f : fields()) {
    const std::size_t d = edit_distance(key, f.key);
    if (d < best_d) {
      best_d = d;
      best = f.key;
    }
  }
  return best;
}

}  // namespace

RawConfig RawConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read config file '" + path + "'");
  return from_stream(in, path);
}

RawConfig RawConfig::from_string(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  return from_stream(in, name);
}

void RawConfig::set(const std::string& key, const std::string& value,
                    const std::string& origin) {
  entries_[lower(key)] = {value, origin};
}

void RawConfig::apply_environment(const std::string& prefix) {
  std::vector<std::pair<std::string, std::string>> found;
  for (char** env = environ; env && *env; ++env) {
    const std::string item(*env);
    const auto eq = item.find('=');
    if (eq == std::string::npos || item.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string name = item.substr(0, eq);
    const std::string rest = name.substr(prefix.size());
    const auto us = rest.find('_');
    if (us == std::string::npos || us == 0 || us + 1 == rest.size()) continue;
    found.emplace_back(name, item.substr(eq + 1));
  }
  // Sorted so overlapping variables resolve the same way everywhere.
  std::sort(found.begin(), found.end());
  for (const auto& [name, value] : found) {
    const std::string rest = name.substr(prefix.size());
    const auto us = rest.find('_');
    set(lower(rest.substr(0, us)) + "." + lower(rest.substr(us + 1)), value, "env " + name);
  }
}

const ConfigEntry* RawConfig::find(const std::string& key) const {
  const auto it = entries_.find(lower(key));
  return it == entries_.end() ? nullptr : &it->second;
}

std::string to_string(const Issue& issue) {
  std::string out;
  if (!issue.origin.empty()) out += issue.origin + ": ";
  if (!issue.key.empty()) out += issue.key + ": ";
  return out + issue.message;
}

LoadedConfig interpret(const RawConfig& raw) {
  LoadedConfig out;
  ExperimentConfig& c = out.config;
  for (double v : {-1.0, -0.5, 0.0, 0.5, 1.0}) c.actions.push_back(Eigen::VectorXd::Constant(1, v));
  for (const auto& [key, entry] : raw.entries()) {
    const auto f = std::find_if(fields().begin(), fields().end(),
                                [&](const Field& fd) { return fd.key == key; });
    if (f != fields().end()) {
      if (auto err = f->parse(entry.value, c); !err.empty()) {
        out.issues.push_back({key, entry.origin, err});
      }
      continue;
    }
    if (key.rfind("model.", 0) == 0) {
      double v = 0.0;
      if (auto err = parse_double(entry.value, v); !err.empty()) {
        out.issues.push_back({key, entry.origin, err});
      } else {
        c.overrides[key.substr(6)] = v;
      }
      continue;
    }
    std::string msg = "unknown key";
    if (auto near = nearest_key(key)) msg += " (did you mean '" + *near + "'?)";
    out.issues.push_back({key, entry.origin, msg});
  }
  std::vector<Issue> more = validate(c);
  for (Issue& issue : more) {
    if (const ConfigEntry* e = raw.find(issue.key)) issue.origin = e->origin;
    out.issues.push_back(std::move(issue));
  }
  return out;
}

std::vector<Issue> validate(const ExperimentConfig& c) {
  std::vector<Issue> issues;
  auto fail = [&](const std::string& key, const std::string& message) {
    issues.push_back({key, "", message});
  };
  if (c.command != "rsde solve" && c.command != "mfg solve" && c.command != "randomize compare") {
    fail("run.command", "must be one of 'rsde solve', 'mfg solve', 'randomize compare'");
  }
  std::optional<ModelDims> dims;
  try {
    dims = make_model(c.model, c.overrides)->dims;
  } catch (const InputError& e) {
    fail("model.name", e.what());
  }
  if (!(c.horizon > 0.0)) fail("grid.t", "horizon must be positive");
  if (c.steps < 1) fail("grid.n", "need at least one step");
  if (c.rough_source == "file") {
    if (c.rough_file.empty()) {
      fail("rough.file", "rough.source = file needs rough.file");
    } else if (!std::filesystem::exists(c.rough_file)) {
      fail("rough.file", "no such file '" + c.rough_file + "'");
    }
  } else if (c.rough_source == "smooth") {
    if (dims && (c.smooth_amplitude.size() != dims->rough ||
                 c.smooth_frequency.size() != dims->rough ||
                 c.smooth_drift.size() != dims->rough)) {
      fail("rough.amplitude", "smooth path needs amplitude, frequency and drift of length k = " +
                                  std::to_string(dims->rough));
    }
  } else if (c.rough_source != "sample") {
    fail("rough.source", "must be sample, file or smooth");
  }
  if (c.rough_refine < 1) fail("rough.refine", "must be at least 1");
  if (c.init_kind != "point" && c.init_kind != "gaussian") {
    fail("init.kind", "must be point or gaussian");
  }
  if (dims && c.init_mean.size() != dims->state) {
    fail("init.mean", "needs " + std::to_string(dims->state) + " entries (state dimension)");
  }
  if (c.init_kind == "gaussian") {
    if (dims && c.init_stddev.size() != dims->state) {
      fail("init.stddev", "needs " + std::to_string(dims->state) + " entries (state dimension)");
    }
    for (double s : c.init_stddev) {
      if (s < 0.0) fail("init.stddev", "standard deviations must be non-negative");
    }
  }
  if (c.particles < 1) fail("particles.count", "need at least one particle");
  if (c.pilot_particles < 1) fail("particles.pilot", "need at least one pilot particle");
  if (!(c.alpha > 1.0 / 3.0 && c.alpha <= 0.5)) fail("index.alpha", "alpha must lie in (1/3, 1/2]");
  if (!(c.gamma > 1.0 && c.gamma <= 2.0)) fail("index.gamma", "gamma must lie in (1, 2]");
  if (auto v = c.index.violation(c.alpha, c.gamma)) {
    fail("index.beta_prime", "(beta, beta') = (" + format_double(c.index.beta) + ", " +
                                 format_double(c.index.beta_prime) + ") is not in Pi: " + *v);
  }
  if (c.m < 2) fail("index.m", "moment order m must be at least 2");
  if (c.actions.empty()) fail("policy.actions", "need at least one action");
  for (const auto& a : c.actions) {
    if (dims && static_cast<std::size_t>(a.size()) != dims->control) {
      fail("policy.actions", "every action needs " + std::to_string(dims->control) +
                                 " components (control dimension)");
      break;
    }
  }
  if (c.lattice_nodes < 2) fail("policy.lattice_nodes", "need at least 2 nodes per dimension");
  if (c.lattice_lower.size() != c.lattice_upper.size()) {
    fail("policy.lattice_lower", "lattice_lower and lattice_upper must be set together");
  } else if (!c.lattice_lower.empty()) {
    if (dims && c.lattice_lower.size() != dims->state) {
      fail("policy.lattice_lower", "lattice bounds need one entry per state dimension");
    }
    for (std::size_t i = 0; i < c.lattice_lower.size(); ++i) {
      if (!(c.lattice_lower[i] < c.lattice_upper[i])) {
        fail("policy.lattice_upper", "upper bounds must exceed lower bounds");
      }
    }
  }
  if (c.quadrature < 1) fail("policy.quadrature", "need at least one quadrature node");
  if (!(c.damping > 0.0 && c.damping <= 1.0)) fail("fixedpoint.damping", "must lie in (0, 1]");
  if (c.tol_w2 < 0.0) fail("fixedpoint.tol_w2", "must be non-negative");
  if (c.tol_exp < 0.0) fail("fixedpoint.tol_exp", "must be non-negative");
  if (c.max_iters < 1) fail("fixedpoint.max_iters", "need at least one iteration");
  if (!(c.M_bound > 0.0)) fail("domain.m_bound", "must be positive");
  if (!(c.epsilon > 0.0)) fail("domain.epsilon", "must be positive");
  if (c.samples < 1) fail("randomize.samples", "need at least one common-noise sample");
  try {
    parse_compare_mode(c.mode);
  } catch (const InputError& e) {
    fail("randomize.mode", e.what());
  }
  if (c.permutations < 1) fail("randomize.permutations", "need at least one permutation");
  if (!(c.diagnostics_level > 0.0 && c.diagnostics_level < 1.0)) {
    fail("diagnostics.level", "must lie in (0, 1)");
  }
  if (c.threads < 0) fail("run.threads", "must be non-negative");
  return issues;
}

std::vector<std::pair<std::string, std::string>> effective_entries(
    const ExperimentConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.print(config));
  std::map<std::string, double> params;
  for (const ModelInfo& info : list_models()) {
    if (info.name != config.model) continue;
    for (const ModelParameter& p : info.parameters) params[p.name] = p.value;
  }
  for (const auto& [k, v] : config.overrides) params[k] = v;
  for (const auto& [k, v] : params) out.emplace_back("model." + k, format_double(v));
  std::sort(out.begin(), out.end());
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  std::string text;
  for (const auto& [k, v] : effective_entries(config)) {
    const auto f = std::find_if(fields().begin(), fields().end(),
                                [&](const Field& fd) { return fd.key == k; });
    if (f != fields().end() && !f->affects_results) continue;
    text += k + "=" + v + "\n";
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

}  // namespace rmfg::cli
