#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rfinfer/forest.hpp"
#include "rfinfer/rng.hpp"
#include "rfinfer/stat_tests.hpp"
#include "rfinfer/trial_data.hpp"

namespace rfinfer {

// Data-generating processes; covariates are iid standard normal and only the
// first four enter the mean.
enum class Model { m1, m2, m3, m4 };

enum class ErrorLaw { normal, lognormal, gumbel };

enum class SimTest {
  t,            // Welch t on raw outcomes
  wilcoxon,     // rank sum on raw outcomes
  t_lm,         // Welch t on linear-model residuals
  wilcoxon_lm,  // rank sum on linear-model residuals
  t_rf,         // Welch t on out-of-bag forest residuals
  wilcoxon_rf,  // rank sum on out-of-bag forest residuals
  ce,           // cross-fitted imputation estimator, z-test
};

const char* to_string(Model model);
const char* to_string(ErrorLaw law);
const char* to_string(SimTest test);
Model model_from_string(const std::string& name);
ErrorLaw error_law_from_string(const std::string& name);
SimTest sim_test_from_string(const std::string& name);
std::vector<SimTest> all_sim_tests();

struct ScenarioConfig {
  Model model = Model::m1;
  int n = 200;        // subjects per replicate
  int n_treated = 0;  // 0: n / 2
  int p = 40;         // covariates, at least 4
  double beta = 0.8;  // covariate signal strength
  double tau = 0.0;   // treatment effect
  ErrorLaw error = ErrorLaw::normal;
  std::vector<SimTest> tests;  // empty: all seven
  long long n_reps = 10000;
  double alpha = 0.05;
  Sided sided = Sided::greater;  // the power studies use one-sided tests
  std::uint64_t seed = 0;
  ForestConfig forest;  // per-replicate seeds are derived, seed field ignored
  int ce_folds = 2;
  int workers = 1;  // 0: hardware concurrency
};

struct TestRate {
  SimTest test = SimTest::t;
  long long rejections = 0;
  long long n_reps = 0;

  double rate() const;
  double mc_se() const;  // binomial standard error of rate()
};

struct ScenarioResult {
  ScenarioConfig config;
  std::vector<TestRate> rates;
  double wall_seconds = 0.0;

  const TestRate& rate_for(SimTest test) const;
};

// Mean outcome for one subject, before noise.
double outcome_mean(Model model, double beta, double tau,
                    const Eigen::RowVectorXd& x, int z);

double sample_error(ErrorLaw law, Rng& rng);

// Seed for replicate `rep` of a run keyed by `master_seed`. Substreams per
// replicate: 0 data, 1 forest residualizer, 2 cross-estimation forests,
// 3 cross-estimation fold shuffle.
std::uint64_t replicate_seed(std::uint64_t master_seed, long long rep);

// Draw order is fixed: covariates row by row, then the assignment shuffle,
// then one error per subject.
TrialDataset generate_dataset(const ScenarioConfig& config,
                              std::uint64_t data_seed);

using ProgressFn = std::function<void(long long completed, long long total)>;

// Runs n_reps independent replicates and tallies rejections per test.
// Results do not depend on the worker count.
ScenarioResult run_scenario(const ScenarioConfig& config,
                            const ProgressFn& progress = {});

struct PowerCurve {
  std::vector<int> n_grid;
  std::vector<ScenarioResult> results;  // aligned with n_grid
};

// Reruns the scenario at each sample size with the same master seed.
PowerCurve power_curve(const ScenarioConfig& base,
                       const std::vector<int>& n_grid,
                       const ProgressFn& progress = {});

// Smallest grid N whose rejection rate reaches `target`, if any.
std::optional<int> first_crossing(const PowerCurve& curve, SimTest test,
                                  double target);

}  // namespace rfinfer
