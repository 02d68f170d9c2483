// rfinfer: covariate-adjusted randomization inference for two-arm trials.
// Subcommands: analyze (one dataset), simulate (Monte Carlo scenario),
// power-curve (scenario across sample sizes), plan (sample-size heuristic).

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "rfinfer/inference.hpp"
#include "rfinfer/manifest.hpp"
#include "rfinfer/rng.hpp"
#include "rfinfer/scenario_io.hpp"
#include "rfinfer/simulation.hpp"

namespace {

using nlohmann::ordered_json;
using namespace rfinfer;

// Master-seed substreams for cmd_analyze.
constexpr std::uint64_t kStreamForest = 0;
constexpr std::uint64_t kStreamPermutation = 1;
constexpr std::uint64_t kStreamCeFolds = 2;
constexpr std::uint64_t kStreamCeForest = 3;

std::string join_argv(int argc, char** argv) {
  std::string out;
  for (int i = 0; i < argc; ++i) {
    if (i > 0) out += ' ';
    out += argv[i];
  }
  return out;
}

// Missing or unreadable inputs are user errors, not internal ones.
std::string digest_input(const std::string& path) {
  try {
    return sha256_file(path);
  } catch (const std::exception& ex) {
    throw std::invalid_argument(ex.what());
  }
}

std::optional<int> env_workers() {
  const char* raw = std::getenv("RFINFER_WORKERS");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  try {
    return std::stoi(raw);
  } catch (const std::exception&) {
    throw std::invalid_argument("RFINFER_WORKERS must be an integer");
  }
}

// "curve.csv" -> "curve.summary.csv", mirroring the manifest naming.
std::string summary_path_for(const std::string& output_path) {
  const std::string manifest = rfinfer::manifest_path_for(output_path);
  return manifest.substr(0, manifest.size() -
                                std::string("manifest.json").size()) +
         "summary.csv";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << content;
  if (!out) {
    throw std::runtime_error("write to '" + path + "' failed");
  }
}

ProgressFn stderr_progress() {
  return [](long long done, long long total) {
    std::cerr << '\r' << done << '/' << total << " replicates" << std::flush;
    if (done == total) std::cerr << '\n';
  };
}

struct AnalyzeArgs {
  std::string input;
  std::string outcome;
  std::string assignment;
  std::string output;
  std::string test = "wilcoxon-rf";
  std::string sided = "two-sided";
  std::string variance = "finite-population";
  std::string ci_method = "t-residual";
  double tau0 = 0.0;
  double ci_level = 0.95;
  long long resamples = 0;  // 0: exact permutation enumeration
  std::uint64_t seed = 0;
  int trees = 500;
  int mtry = 0;
  int min_leaf = 5;
  int max_depth = 0;
  int folds = 2;
};

// Splits "wilcoxon-rf" into the test statistic and the residualization.
struct TestChoice {
  TestKind kind = TestKind::wilcoxon;
  ResidualSource adjustment = ResidualSource::none;
  bool is_ce = false;
};

TestChoice parse_test_choice(const std::string& name) {
  TestChoice choice;
  if (name == "ce") {
    choice.is_ce = true;
    return choice;
  }
  std::string stem = name;
  if (stem.size() > 3 && stem.substr(stem.size() - 3) == "-rf") {
    choice.adjustment = ResidualSource::oob_forest;
    stem = stem.substr(0, stem.size() - 3);
  } else if (stem.size() > 3 && stem.substr(stem.size() - 3) == "-lm") {
    choice.adjustment = ResidualSource::ols;
    stem = stem.substr(0, stem.size() - 3);
  }
  if (stem == "t") {
    choice.kind = TestKind::t;
  } else if (stem == "wilcoxon") {
    choice.kind = TestKind::wilcoxon;
  } else if (stem == "permutation") {
    choice.kind = TestKind::permutation;
  } else {
    throw std::invalid_argument("unknown test '" + name + "'");
  }
  return choice;
}

int run_analyze(const AnalyzeArgs& args, const std::string& command) {
  RunManifest manifest;
  manifest.command = command;
  manifest.version = RFINFER_VERSION;
  manifest.seed = args.seed;
  manifest.started_at = iso8601_utc_now();
  manifest.input_digests.emplace_back(args.input, digest_input(args.input));

  TrialDataset data;
  try {
    data = load_trial_csv(args.input, args.outcome, args.assignment);
  } catch (const std::exception& ex) {
    throw std::invalid_argument(ex.what());
  }

  const TestChoice choice = parse_test_choice(args.test);
  const Sided sided = sided_from_string(args.sided);

  ForestConfig fc;
  fc.n_trees = args.trees;
  fc.mtry = args.mtry;
  fc.min_leaf = args.min_leaf;
  fc.max_depth = args.max_depth;
  fc.n_threads = 1;

  ordered_json result;
  result["method"] = args.test;
  std::string summary;

  if (choice.is_ce) {
    if (args.ci_method != "t-residual") {
      throw std::invalid_argument(
          "test-inversion intervals are not defined for ce");
    }
    fc.seed = derive_seed(args.seed, kStreamCeForest);
    const CrossEstimate ce =
        cross_estimation(data, fc, args.folds, sided,
                         derive_seed(args.seed, kStreamCeFolds));
    // normal-approximation interval, matching the z-test
    const double half =
        boost::math::quantile(boost::math::normal_distribution<double>(),
                              0.5 + args.ci_level / 2.0) *
        ce.std_error;
    result["p_value"] = ce.test.p_value;
    result["statistic"] = ce.test.statistic;
    result["tau_hat"] = ce.tau_hat;
    result["std_error"] = ce.std_error;
    result["ci"] = {ce.tau_hat - half, ce.tau_hat + half};
    result["ci_level"] = args.ci_level;
    result["oob_r_squared"] = nullptr;
    result["importance"] = nullptr;
    summary = "ce: p=" + format_double(ce.test.p_value) +
              " tau_hat=" + format_double(ce.tau_hat);
  } else {
    AnalysisOptions options;
    options.test = choice.kind;
    options.sided = sided;
    options.tau0 = args.tau0;
    options.convention = args.variance == "bernoulli"
                             ? VarianceConvention::bernoulli
                             : VarianceConvention::finite_population;
    options.ci_level = args.ci_level;
    options.ci_method = args.ci_method == "test-inversion"
                            ? CiMethod::test_inversion
                            : CiMethod::t_residual;
    if (choice.kind == TestKind::permutation) {
      options.permutation =
          args.resamples > 0
              ? PermutationMode::Sampled(
                    args.resamples, derive_seed(args.seed, kStreamPermutation))
              : PermutationMode::Exact();
    }

    AdjustedAnalysis analysis;
    switch (choice.adjustment) {
      case ResidualSource::oob_forest:
        fc.seed = derive_seed(args.seed, kStreamForest);
        analysis = rf_adjusted_test(data, fc, options);
        break;
      case ResidualSource::ols:
        analysis = ols_adjusted_test(data, options);
        break;
      default:
        analysis = unadjusted_test(data, options);
        break;
    }

    result["p_value"] = analysis.test.p_value;
    result["statistic"] = analysis.test.statistic;
    result["tau_hat"] = analysis.estimate.tau_hat;
    result["std_error"] = analysis.estimate.std_error;
    if (analysis.estimate.ci) {
      result["ci"] = {analysis.estimate.ci->lower,
                      analysis.estimate.ci->upper};
      result["ci_level"] = analysis.estimate.ci->level;
    } else {
      result["ci"] = nullptr;
      result["ci_level"] = nullptr;
    }
    if (choice.adjustment == ResidualSource::oob_forest) {
      result["oob_r_squared"] = analysis.forest.oob_r_squared;
      result["importance"] = analysis.forest.importance;
    } else {
      result["oob_r_squared"] = nullptr;
      result["importance"] = nullptr;
    }
    summary = args.test + ": p=" + format_double(analysis.test.p_value) +
              " tau_hat=" + format_double(analysis.estimate.tau_hat);
    if (analysis.estimate.ci) {
      summary += " ci=[" + format_double(analysis.estimate.ci->lower) + ", " +
                 format_double(analysis.estimate.ci->upper) + "] @" +
                 format_double(args.ci_level);
    }
  }

  write_text_file(args.output, result.dump(2) + "\n");
  manifest.outputs.push_back(args.output);

  ordered_json config;
  config["input"] = args.input;
  config["outcome"] = args.outcome;
  config["assignment"] = args.assignment;
  config["test"] = args.test;
  config["sided"] = args.sided;
  config["tau0"] = args.tau0;
  config["variance"] = args.variance;
  config["ci_method"] = args.ci_method;
  config["ci_level"] = args.ci_level;
  config["resamples"] = args.resamples;
  config["seed"] = args.seed;
  config["forest"] = {{"n_trees", fc.n_trees},
                      {"mtry", fc.mtry},
                      {"min_leaf", fc.min_leaf},
                      {"max_depth", fc.max_depth}};
  config["folds"] = args.folds;
  manifest.config = config;
  manifest.finished_at = iso8601_utc_now();
  write_manifest(manifest, args.output);

  std::cout << summary << '\n';
  return 0;
}

struct SimulateArgs {
  std::string config_path;
  std::string output;
  long long reps = -1;     // -1: use config value
  std::int64_t seed = -1;  // -1: use config value
  int workers = -1;        // -1: env override or config value
};

ScenarioConfig resolve_scenario(const SimulateArgs& args) {
  ScenarioConfig cfg = load_scenario_config(args.config_path);
  if (args.reps >= 0) cfg.n_reps = args.reps;
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (args.workers >= 0) {
    cfg.workers = args.workers;
  } else if (const auto env = env_workers()) {
    cfg.workers = *env;
  }
  return cfg;
}

int run_simulate(const SimulateArgs& args, const std::string& command) {
  RunManifest manifest;
  manifest.command = command;
  manifest.version = RFINFER_VERSION;
  manifest.started_at = iso8601_utc_now();
  manifest.input_digests.emplace_back(args.config_path,
                                      digest_input(args.config_path));

  const ScenarioConfig cfg = resolve_scenario(args);
  manifest.seed = cfg.seed;

  const ScenarioResult result = run_scenario(cfg, stderr_progress());
  write_rates_csv(args.output, {result});
  manifest.outputs.push_back(args.output);
  manifest.config = scenario_to_json(result.config);
  manifest.finished_at = iso8601_utc_now();
  write_manifest(manifest, args.output);

  std::string summary = std::string(to_string(cfg.model)) +
                        " N=" + std::to_string(cfg.n) +
                        " tau=" + format_double(cfg.tau) + ":";
  for (const auto& rate : result.rates) {
    summary += std::string(" ") + to_string(rate.test) + "=" +
               format_double(rate.rate());
  }
  std::cout << summary << '\n';
  return 0;
}

struct PowerCurveArgs {
  SimulateArgs sim;
  std::vector<int> n_grid;
  double target = 0.8;
};

int run_power_curve(const PowerCurveArgs& args, const std::string& command) {
  RunManifest manifest;
  manifest.command = command;
  manifest.version = RFINFER_VERSION;
  manifest.started_at = iso8601_utc_now();
  manifest.input_digests.emplace_back(args.sim.config_path,
                                      digest_input(args.sim.config_path));

  const ScenarioConfig base = resolve_scenario(args.sim);
  manifest.seed = base.seed;

  const PowerCurve curve = power_curve(base, args.n_grid, stderr_progress());
  write_rates_csv(args.sim.output, curve.results);
  const std::string summary_path = summary_path_for(args.sim.output);
  write_power_summary(summary_path, curve, args.target);
  manifest.outputs.push_back(args.sim.output);
  manifest.outputs.push_back(summary_path);

  ordered_json config = scenario_to_json(base);
  config.erase("n");
  config["n_grid"] = args.n_grid;
  config["target_power"] = args.target;
  manifest.config = config;
  manifest.finished_at = iso8601_utc_now();
  write_manifest(manifest, args.sim.output);

  std::string summary = "crossings @" + format_double(args.target) + ":";
  for (SimTest test : curve.results.front().config.tests) {
    summary += std::string(" ") + to_string(test) + "=";
    if (const auto n = first_crossing(curve, test, args.target)) {
      summary += std::to_string(*n);
    } else {
      summary += "not reached";
    }
  }
  std::cout << summary << '\n';
  return 0;
}

int run_plan(int n, double gamma) {
  const double savings = sample_size_reduction(n, gamma);
  std::cout << "N=" << n << " gamma=" << format_double(gamma)
            << " savings=" << format_double(savings)
            << " adjusted_n=" << format_double(n - savings) << '\n'
            << "note: first-order heuristic; validate the planned size with a "
               "power simulation\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Covariate-adjusted randomization inference for two-arm "
               "randomized trials"};
  app.set_version_flag("--version", RFINFER_VERSION);
  app.require_subcommand(1);

  AnalyzeArgs analyze;
  auto* cmd_analyze = app.add_subcommand(
      "analyze", "Test and estimate a treatment effect from a trial CSV");
  cmd_analyze->add_option("-i,--input", analyze.input, "Trial CSV file")
      ->required();
  cmd_analyze->add_option("--outcome", analyze.outcome, "Outcome column name")
      ->required();
  cmd_analyze
      ->add_option("--assignment", analyze.assignment,
                   "0/1 assignment column name")
      ->required();
  cmd_analyze->add_option("-o,--output", analyze.output, "Result JSON path")
      ->required();
  cmd_analyze
      ->add_option("--test", analyze.test,
                   "Test and adjustment: t, wilcoxon, permutation, each "
                   "optionally suffixed -lm or -rf, or ce")
      ->check(CLI::IsMember({"t", "wilcoxon", "permutation", "t-lm",
                             "wilcoxon-lm", "permutation-lm", "t-rf",
                             "wilcoxon-rf", "permutation-rf", "ce"}))
      ->capture_default_str();
  cmd_analyze->add_option("--sided", analyze.sided, "Alternative hypothesis")
      ->check(CLI::IsMember({"two-sided", "greater", "less"}))
      ->capture_default_str();
  cmd_analyze->add_option("--tau0", analyze.tau0, "Null effect to test")
      ->capture_default_str();
  cmd_analyze
      ->add_option("--variance", analyze.variance,
                   "Variance convention for the estimate")
      ->check(CLI::IsMember({"finite-population", "bernoulli"}))
      ->capture_default_str();
  cmd_analyze
      ->add_option("--ci-level", analyze.ci_level, "Confidence level")
      ->capture_default_str();
  cmd_analyze
      ->add_option("--ci-method", analyze.ci_method,
                   "Interval construction")
      ->check(CLI::IsMember({"t-residual", "test-inversion"}))
      ->capture_default_str();
  cmd_analyze
      ->add_option("--resamples", analyze.resamples,
                   "Permutation resamples; 0 enumerates exactly")
      ->capture_default_str();
  cmd_analyze->add_option("--seed", analyze.seed, "Master seed")
      ->capture_default_str();
  cmd_analyze->add_option("--trees", analyze.trees, "Forest size")
      ->capture_default_str();
  cmd_analyze
      ->add_option("--mtry", analyze.mtry,
                   "Features tried per split; 0 means p/3")
      ->capture_default_str();
  cmd_analyze->add_option("--min-leaf", analyze.min_leaf, "Minimum leaf size")
      ->capture_default_str();
  cmd_analyze
      ->add_option("--max-depth", analyze.max_depth,
                   "Tree depth limit; 0 means unlimited")
      ->capture_default_str();
  cmd_analyze
      ->add_option("--folds", analyze.folds, "Cross-fitting folds for ce")
      ->capture_default_str();

  SimulateArgs simulate;
  auto* cmd_simulate = app.add_subcommand(
      "simulate", "Run one Monte Carlo scenario from a JSON config");
  cmd_simulate
      ->add_option("-c,--config", simulate.config_path, "Scenario JSON file")
      ->required();
  cmd_simulate->add_option("-o,--output", simulate.output, "Rates CSV path")
      ->required();
  cmd_simulate->add_option("--reps", simulate.reps,
                           "Override replicate count");
  cmd_simulate->add_option("--seed", simulate.seed, "Override master seed");
  cmd_simulate->add_option("--workers", simulate.workers,
                           "Worker threads; 0 uses all cores");

  PowerCurveArgs curve;
  auto* cmd_curve = app.add_subcommand(
      "power-curve", "Run a scenario across sample sizes");
  cmd_curve
      ->add_option("-c,--config", curve.sim.config_path, "Scenario JSON file")
      ->required();
  cmd_curve->add_option("-o,--output", curve.sim.output, "Rates CSV path")
      ->required();
  cmd_curve
      ->add_option("--n-grid", curve.n_grid,
                   "Comma-separated sample sizes, e.g. 100,150,200")
      ->required()
      ->delimiter(',');
  cmd_curve->add_option("--target", curve.target, "Power target for the "
                        "crossing summary")
      ->capture_default_str();
  cmd_curve->add_option("--reps", curve.sim.reps, "Override replicate count");
  cmd_curve->add_option("--seed", curve.sim.seed, "Override master seed");
  cmd_curve->add_option("--workers", curve.sim.workers,
                        "Worker threads; 0 uses all cores");

  int plan_n = 0;
  double plan_gamma = 0.0;
  auto* cmd_plan = app.add_subcommand(
      "plan", "Approximate subject savings from covariate adjustment");
  cmd_plan->add_option("--n", plan_n, "Unadjusted sample size requirement")
      ->required();
  cmd_plan
      ->add_option("--gamma", plan_gamma,
                   "Outcome variance fraction the adjustment explains")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string command = join_argv(argc, argv);
  try {
    if (*cmd_analyze) return run_analyze(analyze, command);
    if (*cmd_simulate) return run_simulate(simulate, command);
    if (*cmd_curve) return run_power_curve(curve, command);
    if (*cmd_plan) return run_plan(plan_n, plan_gamma);
  } catch (const std::invalid_argument& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "internal error: " << ex.what() << '\n';
    return 1;
  }
  return 1;
}
