#include "rfinfer/scenario_io.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace rfinfer {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& item : j.items()) {
    if (known.find(item.key()) == known.end()) {
      throw std::invalid_argument("unknown " + where + " key '" + item.key() +
                                  "'");
    }
  }
}

template <typename T>
T field(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument(std::string("bad value for '") + key + "'");
  }
}

ForestConfig forest_from_json(const json& j, const ForestConfig& base) {
  if (!j.is_object()) {
    throw std::invalid_argument("'forest' must be a JSON object");
  }
  reject_unknown_keys(j, {"n_trees", "mtry", "min_leaf", "max_depth",
                          "bootstrap"},
                      "forest");
  ForestConfig fc = base;
  fc.n_trees = field(j, "n_trees", fc.n_trees);
  fc.mtry = field(j, "mtry", fc.mtry);
  fc.min_leaf = field(j, "min_leaf", fc.min_leaf);
  fc.max_depth = field(j, "max_depth", fc.max_depth);
  fc.bootstrap = field(j, "bootstrap", fc.bootstrap);
  return fc;
}

}  // namespace

ScenarioConfig scenario_from_json(const json& j) {
  if (!j.is_object()) {
    throw std::invalid_argument("scenario config must be a JSON object");
  }
  reject_unknown_keys(
      j,
      {"model", "n", "n_treated", "p", "beta", "tau", "error", "tests",
       "n_reps", "alpha", "sided", "seed", "forest", "ce_folds", "workers"},
      "scenario");

  ScenarioConfig cfg;
  cfg.model = model_from_string(
      field<std::string>(j, "model", to_string(cfg.model)));
  cfg.n = field(j, "n", cfg.n);
  cfg.n_treated = field(j, "n_treated", cfg.n_treated);
  cfg.p = field(j, "p", cfg.p);
  cfg.beta = field(j, "beta", cfg.beta);
  cfg.tau = field(j, "tau", cfg.tau);
  cfg.error = error_law_from_string(
      field<std::string>(j, "error", to_string(cfg.error)));
  if (j.contains("tests")) {
    cfg.tests.clear();
    for (const auto& name : field(j, "tests", std::vector<std::string>{})) {
      cfg.tests.push_back(sim_test_from_string(name));
    }
  }
  cfg.n_reps = field(j, "n_reps", cfg.n_reps);
  cfg.alpha = field(j, "alpha", cfg.alpha);
  cfg.sided = sided_from_string(
      field<std::string>(j, "sided", to_string(cfg.sided)));
  cfg.seed = field(j, "seed", cfg.seed);
  if (j.contains("forest")) {
    cfg.forest = forest_from_json(j.at("forest"), cfg.forest);
  }
  cfg.ce_folds = field(j, "ce_folds", cfg.ce_folds);
  cfg.workers = field(j, "workers", cfg.workers);
  return cfg;
}

ScenarioConfig load_scenario_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::invalid_argument("cannot open scenario config '" + path + "'");
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw std::invalid_argument("scenario config '" + path +
                                "': " + ex.what());
  }
  return scenario_from_json(j);
}

nlohmann::ordered_json scenario_to_json(const ScenarioConfig& config) {
  nlohmann::ordered_json j;
  j["model"] = to_string(config.model);
  j["n"] = config.n;
  j["n_treated"] = config.n_treated;
  j["p"] = config.p;
  j["beta"] = config.beta;
  j["tau"] = config.tau;
  j["error"] = to_string(config.error);
  auto tests = nlohmann::ordered_json::array();
  for (SimTest t : config.tests.empty() ? all_sim_tests() : config.tests) {
    tests.push_back(to_string(t));
  }
  j["tests"] = tests;
  j["n_reps"] = config.n_reps;
  j["alpha"] = config.alpha;
  j["sided"] = to_string(config.sided);
  j["seed"] = config.seed;
  j["forest"] = {{"n_trees", config.forest.n_trees},
                 {"mtry", config.forest.mtry},
                 {"min_leaf", config.forest.min_leaf},
                 {"max_depth", config.forest.max_depth},
                 {"bootstrap", config.forest.bootstrap}};
  j["ce_folds"] = config.ce_folds;
  j["workers"] = config.workers;
  return j;
}

std::string format_double(double value) {
  return json(value).dump();
}

void write_rates_csv(const std::string& path,
                     const std::vector<ScenarioResult>& results) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << "model,N,p,beta,tau,error,test,alpha,rejection_rate,mc_se,n_reps,"
         "seed\n";
  for (const auto& result : results) {
    const ScenarioConfig& c = result.config;
    for (const auto& rate : result.rates) {
      out << to_string(c.model) << ',' << c.n << ',' << c.p << ','
          << format_double(c.beta) << ',' << format_double(c.tau) << ','
          << to_string(c.error) << ',' << to_string(rate.test) << ','
          << format_double(c.alpha) << ',' << format_double(rate.rate())
          << ',' << format_double(rate.mc_se()) << ',' << rate.n_reps << ','
          << c.seed << '\n';
    }
  }
  if (!out) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

void write_power_summary(const std::string& path, const PowerCurve& curve,
                         double target) {
  if (curve.results.empty()) {
    throw std::invalid_argument("power summary needs at least one result");
  }
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << "test,target_power,n_at_target\n";
  for (SimTest test : curve.results.front().config.tests) {
    out << to_string(test) << ',' << format_double(target) << ',';
    if (const auto n = first_crossing(curve, test, target)) {
      out << *n;
    } else {
      out << "not reached";
    }
    out << '\n';
  }
  if (!out) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

}  // namespace rfinfer
