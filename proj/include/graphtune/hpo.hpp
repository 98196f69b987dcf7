#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "graphtune/common.hpp"

namespace graphtune::hpo {

using ParamValue = std::variant<Index, double, std::string>;
using Assignment = std::map<std::string, ParamValue>;

struct HyperParamSpec {
  enum class Kind { integer, numerical, categorical };
  enum class Scale { linear, log };

  std::string name;
  Kind kind = Kind::numerical;
  Scale scale = Scale::linear;
  double low = 0.0, high = 0.0;       // inclusive, integer/numerical
  std::vector<std::string> choices;   // categorical
};

struct SearchSpace {
  std::vector<HyperParamSpec> params;
};

void validate_space(const SearchSpace& space);
bool assignment_in_space(const Assignment& a, const SearchSpace& space);

struct Trial {
  Assignment assignment;
  double score = 0.0;  // validation accuracy; maximize
  double seconds = 0.0;
  Index index = 0;
  std::string note;  // failure note when the objective threw
};

struct HpoConfig {
  enum class Method { random, tpe };
  Method method = Method::random;
  Index n_trials = 10;
  std::optional<double> time_budget;  // seconds
  std::uint64_t seed = 0;
  double gamma = 0.25;
  Index n_candidates = 24;
  Index n_startup = 5;
};

void validate_hpo_config(const HpoConfig& cfg);

// One random draw per dimension: uniform (log-uniform) over the range,
// uniform over choices.
Assignment space_sample(const SearchSpace& space, Rng& rng);

// Tree-structured Parzen Estimator suggestion: split history into good/bad
// by score, model per-dimension densities l and g, draw n_candidates from l
// and return the candidate maximizing l/g.
Assignment tpe_suggest(const SearchSpace& space, const std::vector<Trial>& history,
                       const HpoConfig& cfg, Rng& rng);

struct HpoResult {
  Trial best;
  std::vector<Trial> history;
};

using Objective = std::function<double(const Assignment&)>;
using Clock = std::function<double()>;

Clock steady_clock_seconds();

// Sequential optimization loop. The first n_startup trials are random even
// under TPE; `initial` assignments (if any) are evaluated first and count
// toward the startup quota. A failed objective records score=-inf and the
// loop continues. The time budget is checked between trials, at least one
// trial always runs.
HpoResult run_hpo(const Objective& objective, const SearchSpace& space,
                  const HpoConfig& cfg,
                  const std::vector<Assignment>& initial = {},
                  const Clock& clock = steady_clock_seconds());

SearchSpace space_from_json(const nlohmann::json& arr);
nlohmann::json space_to_json(const SearchSpace& space);
nlohmann::json assignment_to_json(const Assignment& a);
Assignment assignment_from_json(const nlohmann::json& j);

}  // namespace graphtune::hpo
