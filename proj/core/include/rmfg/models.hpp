#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rmfg/vectorfield.hpp"

namespace rmfg {

struct ModelParameter {
  std::string name;
  double value = 0.0;
  std::string help;
};

struct ModelInfo {
  std::string name;
  std::string description;
  std::vector<ModelParameter> parameters;  // defaults
};

std::vector<ModelInfo> list_models();

// Builds a registered model; overrides must name declared parameters.
// Throws InputError (with a suggestion) for unknown names.
std::shared_ptr<const CoefficientSet> make_model(
    const std::string& name, const std::map<std::string, double>& overrides = {});

// Closest registered name by edit distance, if reasonably close.
std::optional<std::string> suggest_model(const std::string& name);

std::size_t edit_distance(const std::string& a, const std::string& b);

}  // namespace rmfg
