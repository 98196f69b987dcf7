#include "graphtune/hpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

namespace graphtune::hpo {

namespace {

using json = nlohmann::json;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

double gauss(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

double as_double(const ParamValue& v) {
  if (std::holds_alternative<Index>(v))
    return static_cast<double>(std::get<Index>(v));
  if (std::holds_alternative<double>(v)) return std::get<double>(v);
  throw Error("hpo: categorical value used as number");
}

// Per-dimension Parzen mixture: Gaussians at the observations plus one prior
// component at the range midpoint, all sharing the per-set bandwidth
// max(width/sqrt(count), width*1e-3). Log-scaled dims live in ln-space.
struct NumericModel {
  double lo = 0.0, hi = 0.0;  // model-space bounds
  bool log_scale = false;
  std::vector<double> centers;  // model-space, prior midpoint last
  double sigma = 0.0;

  static NumericModel build(const HyperParamSpec& dim,
                            const std::vector<double>& raw_values) {
    NumericModel m;
    m.log_scale = dim.scale == HyperParamSpec::Scale::log;
    m.lo = m.log_scale ? std::log(dim.low) : dim.low;
    m.hi = m.log_scale ? std::log(dim.high) : dim.high;
    for (double v : raw_values)
      m.centers.push_back(m.log_scale ? std::log(v) : v);
    const double width = m.hi - m.lo;
    const double count = std::max<double>(1.0, static_cast<double>(raw_values.size()));
    m.sigma = std::max({width / std::sqrt(count), width * 1e-3, 1e-12});
    m.centers.push_back(0.5 * (m.lo + m.hi));  // prior
    return m;
  }

  double sample(Rng& rng) const {
    const std::size_t comp = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(centers.size()) - 1.0,
                         std::floor(uniform01(rng) * static_cast<double>(centers.size()))));
    double v = centers[comp] + sigma * gauss(rng);
    v = std::clamp(v, lo, hi);
    return log_scale ? std::exp(v) : v;
  }

  double log_density(double raw_value) const {
    const double x = log_scale ? std::log(raw_value) : raw_value;
    const double log_norm =
        -0.5 * std::log(2.0 * M_PI) - std::log(sigma) - std::log(static_cast<double>(centers.size()));
    double mx = kNegInf;
    std::vector<double> terms;
    terms.reserve(centers.size());
    for (double c : centers) {
      const double z = (x - c) / sigma;
      const double t = log_norm - 0.5 * z * z;
      terms.push_back(t);
      mx = std::max(mx, t);
    }
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - mx);
    return mx + std::log(sum);
  }
};

struct CategoricalModel {
  std::vector<double> probs;

  static CategoricalModel build(const HyperParamSpec& dim,
                                const std::vector<std::string>& values) {
    CategoricalModel m;
    m.probs.assign(dim.choices.size(), 1.0);  // +1 prior per choice
    for (const auto& v : values) {
      const auto it = std::find(dim.choices.begin(), dim.choices.end(), v);
      m.probs[static_cast<std::size_t>(it - dim.choices.begin())] += 1.0;
    }
    const double total = std::accumulate(m.probs.begin(), m.probs.end(), 0.0);
    for (auto& p : m.probs) p /= total;
    return m;
  }

  std::size_t sample(Rng& rng) const {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

  double log_density(std::size_t choice) const {
    return std::log(probs[choice]);
  }
};

Index round_clamp(double v, double low, double high) {
  return static_cast<Index>(std::clamp(std::llround(v), static_cast<long long>(low),
                                       static_cast<long long>(high)));
}

}  // namespace

void validate_space(const SearchSpace& space) {
  std::set<std::string> names;
  for (const auto& p : space.params) {
    if (p.name.empty()) throw ConfigError("search space: empty parameter name");
    if (!names.insert(p.name).second)
      throw ConfigError("search space: duplicate name '" + p.name + "'");
    if (p.kind == HyperParamSpec::Kind::categorical) {
      if (p.choices.empty())
        throw ConfigError("search space: '" + p.name + "' has no choices");
      std::set<std::string> uniq(p.choices.begin(), p.choices.end());
      if (uniq.size() != p.choices.size())
        throw ConfigError("search space: '" + p.name + "' has duplicate choices");
    } else {
      // integer ranges may be degenerate (a pinned knob); numerical may not
      const bool ok = p.kind == HyperParamSpec::Kind::integer ? p.low <= p.high
                                                              : p.low < p.high;
      if (!ok)
        throw ConfigError("search space: '" + p.name + "' needs low < high");
      if (p.scale == HyperParamSpec::Scale::log && p.low <= 0.0)
        throw ConfigError("search space: log scale needs low > 0 for '" + p.name + "'");
    }
  }
}

bool assignment_in_space(const Assignment& a, const SearchSpace& space) {
  if (a.size() != space.params.size()) return false;
  for (const auto& dim : space.params) {
    const auto it = a.find(dim.name);
    if (it == a.end()) return false;
    switch (dim.kind) {
      case HyperParamSpec::Kind::categorical: {
        if (!std::holds_alternative<std::string>(it->second)) return false;
        const auto& v = std::get<std::string>(it->second);
        if (std::find(dim.choices.begin(), dim.choices.end(), v) == dim.choices.end())
          return false;
        break;
      }
      case HyperParamSpec::Kind::integer: {
        if (!std::holds_alternative<Index>(it->second)) return false;
        const double v = static_cast<double>(std::get<Index>(it->second));
        if (v < dim.low || v > dim.high) return false;
        break;
      }
      case HyperParamSpec::Kind::numerical: {
        if (!std::holds_alternative<double>(it->second)) return false;
        const double v = std::get<double>(it->second);
        if (v < dim.low || v > dim.high) return false;
        break;
      }
    }
  }
  return true;
}

void validate_hpo_config(const HpoConfig& cfg) {
  if (cfg.n_trials < 1) throw ConfigError("hpo: n_trials must be >= 1");
  if (cfg.gamma <= 0.0 || cfg.gamma >= 1.0)
    throw ConfigError("hpo: gamma must be in (0,1)");
  if (cfg.n_candidates < 1) throw ConfigError("hpo: n_candidates must be >= 1");
  if (cfg.n_startup < 1) throw ConfigError("hpo: n_startup must be >= 1");
}

Assignment space_sample(const SearchSpace& space, Rng& rng) {
  Assignment a;
  for (const auto& dim : space.params) {
    switch (dim.kind) {
      case HyperParamSpec::Kind::categorical: {
        const std::size_t i = static_cast<std::size_t>(std::min<double>(
            static_cast<double>(dim.choices.size()) - 1.0,
            std::floor(uniform01(rng) * static_cast<double>(dim.choices.size()))));
        a[dim.name] = dim.choices[i];
        break;
      }
      case HyperParamSpec::Kind::numerical: {
        if (dim.scale == HyperParamSpec::Scale::log) {
          const double v = std::exp(std::log(dim.low) +
                                    uniform01(rng) * (std::log(dim.high) - std::log(dim.low)));
          a[dim.name] = std::clamp(v, dim.low, dim.high);
        } else {
          a[dim.name] = dim.low + uniform01(rng) * (dim.high - dim.low);
        }
        break;
      }
      case HyperParamSpec::Kind::integer: {
        if (dim.scale == HyperParamSpec::Scale::log) {
          const double v = std::exp(std::log(dim.low) +
                                    uniform01(rng) * (std::log(dim.high) - std::log(dim.low)));
          a[dim.name] = round_clamp(v, dim.low, dim.high);
        } else {
          std::uniform_int_distribution<Index> dist(static_cast<Index>(dim.low),
                                                    static_cast<Index>(dim.high));
          a[dim.name] = dist(rng);
        }
        break;
      }
    }
  }
  return a;
}

Assignment tpe_suggest(const SearchSpace& space, const std::vector<Trial>& history,
                       const HpoConfig& cfg, Rng& rng) {
  if (history.empty()) throw Error("tpe_suggest: empty history");
  const Index n = static_cast<Index>(history.size());
  const Index n_good = std::max<Index>(
      1, static_cast<Index>(std::ceil(cfg.gamma * static_cast<double>(n))));

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return history[static_cast<std::size_t>(a)].score >
           history[static_cast<std::size_t>(b)].score;
  });

  const auto in_good = [&](std::size_t rank) { return static_cast<Index>(rank) < n_good; };

  // per-dimension models of l (good) and g (bad)
  struct DimModel {
    bool categorical = false;
    NumericModel l_num, g_num;
    CategoricalModel l_cat, g_cat;
  };
  std::vector<DimModel> models;
  models.reserve(space.params.size());
  for (const auto& dim : space.params) {
    DimModel m;
    if (dim.kind == HyperParamSpec::Kind::categorical) {
      m.categorical = true;
      std::vector<std::string> good_vals, bad_vals;
      for (std::size_t r = 0; r < order.size(); ++r) {
        const auto& v = std::get<std::string>(
            history[static_cast<std::size_t>(order[r])].assignment.at(dim.name));
        (in_good(r) ? good_vals : bad_vals).push_back(v);
      }
      m.l_cat = CategoricalModel::build(dim, good_vals);
      m.g_cat = CategoricalModel::build(dim, bad_vals);
    } else {
      std::vector<double> good_vals, bad_vals;
      for (std::size_t r = 0; r < order.size(); ++r) {
        const double v = as_double(
            history[static_cast<std::size_t>(order[r])].assignment.at(dim.name));
        (in_good(r) ? good_vals : bad_vals).push_back(v);
      }
      m.l_num = NumericModel::build(dim, good_vals);
      m.g_num = NumericModel::build(dim, bad_vals);
    }
    models.push_back(std::move(m));
  }

  Assignment best;
  double best_ratio = kNegInf;
  for (Index c = 0; c < cfg.n_candidates; ++c) {
    Assignment cand;
    double log_ratio = 0.0;
    for (std::size_t d = 0; d < space.params.size(); ++d) {
      const auto& dim = space.params[d];
      const auto& m = models[d];
      if (m.categorical) {
        const std::size_t choice = m.l_cat.sample(rng);
        cand[dim.name] = dim.choices[choice];
        log_ratio += m.l_cat.log_density(choice) - m.g_cat.log_density(choice);
      } else if (dim.kind == HyperParamSpec::Kind::integer) {
        const Index v = round_clamp(m.l_num.sample(rng), dim.low, dim.high);
        cand[dim.name] = v;
        const double raw = static_cast<double>(v);
        log_ratio += m.l_num.log_density(raw) - m.g_num.log_density(raw);
      } else {
        const double v = m.l_num.sample(rng);
        cand[dim.name] = v;
        log_ratio += m.l_num.log_density(v) - m.g_num.log_density(v);
      }
    }
    if (log_ratio > best_ratio) {
      best_ratio = log_ratio;
      best = std::move(cand);
    }
  }
  return best;
}

Clock steady_clock_seconds() {
  return []() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
}

HpoResult run_hpo(const Objective& objective, const SearchSpace& space,
                  const HpoConfig& cfg, const std::vector<Assignment>& initial,
                  const Clock& clock) {
  validate_space(space);
  validate_hpo_config(cfg);
  const double start = clock();

  HpoResult result;
  for (Index i = 0; i < cfg.n_trials; ++i) {
    if (i > 0 && cfg.time_budget && clock() - start >= *cfg.time_budget) break;
    Rng rng = make_rng(cfg.seed, /*stream=*/0x7e57, static_cast<std::uint64_t>(i));
    Trial trial;
    trial.index = i;
    if (i < static_cast<Index>(initial.size())) {
      trial.assignment = initial[static_cast<std::size_t>(i)];
      if (!assignment_in_space(trial.assignment, space))
        throw ConfigError("run_hpo: initial assignment " + std::to_string(i) +
                          " violates the search space");
    } else if (cfg.method == HpoConfig::Method::tpe &&
               static_cast<Index>(result.history.size()) >= cfg.n_startup) {
      trial.assignment = tpe_suggest(space, result.history, cfg, rng);
    } else {
      trial.assignment = space_sample(space, rng);
    }
    const double t0 = clock();
    try {
      trial.score = objective(trial.assignment);
    } catch (const std::exception& e) {
      trial.score = kNegInf;
      trial.note = e.what();
    }
    trial.seconds = clock() - t0;
    result.history.push_back(std::move(trial));
  }

  const Trial* best = &result.history.front();
  for (const Trial& t : result.history)
    if (t.score > best->score) best = &t;
  result.best = *best;
  return result;
}

SearchSpace space_from_json(const json& arr) {
  SearchSpace space;
  if (!arr.is_array()) throw ConfigError("search space: expected an array");
  for (const auto& item : arr) {
    HyperParamSpec p;
    p.name = item.at("name").get<std::string>();
    const std::string kind = item.at("kind").get<std::string>();
    if (kind == "integer")
      p.kind = HyperParamSpec::Kind::integer;
    else if (kind == "numerical")
      p.kind = HyperParamSpec::Kind::numerical;
    else if (kind == "categorical")
      p.kind = HyperParamSpec::Kind::categorical;
    else
      throw ConfigError("search space: unknown kind '" + kind + "'");
    const std::string scale = item.value("scale", std::string("linear"));
    if (scale == "log")
      p.scale = HyperParamSpec::Scale::log;
    else if (scale == "linear")
      p.scale = HyperParamSpec::Scale::linear;
    else
      throw ConfigError("search space: unknown scale '" + scale + "'");
    if (p.kind == HyperParamSpec::Kind::categorical) {
      p.choices = item.at("choices").get<std::vector<std::string>>();
    } else {
      p.low = item.at("low").get<double>();
      p.high = item.at("high").get<double>();
    }
    space.params.push_back(std::move(p));
  }
  validate_space(space);
  return space;
}

json space_to_json(const SearchSpace& space) {
  json arr = json::array();
  for (const auto& p : space.params) {
    json item;
    item["name"] = p.name;
    item["kind"] = p.kind == HyperParamSpec::Kind::integer      ? "integer"
                   : p.kind == HyperParamSpec::Kind::numerical ? "numerical"
                                                               : "categorical";
    if (p.kind == HyperParamSpec::Kind::categorical) {
      item["choices"] = p.choices;
    } else {
      item["scale"] = p.scale == HyperParamSpec::Scale::log ? "log" : "linear";
      item["low"] = p.low;
      item["high"] = p.high;
    }
    arr.push_back(std::move(item));
  }
  return arr;
}

json assignment_to_json(const Assignment& a) {
  json j = json::object();
  for (const auto& [name, value] : a) {
    if (std::holds_alternative<Index>(value))
      j[name] = std::get<Index>(value);
    else if (std::holds_alternative<double>(value))
      j[name] = std::get<double>(value);
    else
      j[name] = std::get<std::string>(value);
  }
  return j;
}

Assignment assignment_from_json(const json& j) {
  Assignment a;
  for (const auto& [name, value] : j.items()) {
    if (value.is_number_integer())
      a[name] = value.get<Index>();
    else if (value.is_number_float())
      a[name] = value.get<double>();
    else if (value.is_string())
      a[name] = value.get<std::string>();
    else
      throw ConfigError("assignment: unsupported value type for '" + name + "'");
  }
  return a;
}

}  // namespace graphtune::hpo
