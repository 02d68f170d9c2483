#include "rfinfer/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "rfinfer/inference.hpp"

namespace rfinfer {

const char* to_string(Model model) {
  switch (model) {
    case Model::m1: return "m1";
    case Model::m2: return "m2";
    case Model::m3: return "m3";
    case Model::m4: return "m4";
  }
  return "unknown";
}

const char* to_string(ErrorLaw law) {
  switch (law) {
    case ErrorLaw::normal: return "normal";
    case ErrorLaw::lognormal: return "lognormal";
    case ErrorLaw::gumbel: return "gumbel";
  }
  return "unknown";
}

const char* to_string(SimTest test) {
  switch (test) {
    case SimTest::t: return "t";
    case SimTest::wilcoxon: return "wilcoxon";
    case SimTest::t_lm: return "t-lm";
    case SimTest::wilcoxon_lm: return "wilcoxon-lm";
    case SimTest::t_rf: return "t-rf";
    case SimTest::wilcoxon_rf: return "wilcoxon-rf";
    case SimTest::ce: return "ce";
  }
  return "unknown";
}

Model model_from_string(const std::string& name) {
  for (Model m : {Model::m1, Model::m2, Model::m3, Model::m4}) {
    if (name == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown model '" + name +
                              "' (expected m1, m2, m3 or m4)");
}

ErrorLaw error_law_from_string(const std::string& name) {
  for (ErrorLaw e : {ErrorLaw::normal, ErrorLaw::lognormal, ErrorLaw::gumbel}) {
    if (name == to_string(e)) return e;
  }
  throw std::invalid_argument(
      "unknown error law '" + name +
      "' (expected normal, lognormal or gumbel)");
}

SimTest sim_test_from_string(const std::string& name) {
  for (SimTest t : all_sim_tests()) {
    if (name == to_string(t)) return t;
  }
  throw std::invalid_argument(
      "unknown test '" + name +
      "' (expected t, wilcoxon, t-lm, wilcoxon-lm, t-rf, wilcoxon-rf or ce)");
}

std::vector<SimTest> all_sim_tests() {
  return {SimTest::t,    SimTest::wilcoxon,    SimTest::t_lm,
          SimTest::wilcoxon_lm, SimTest::t_rf, SimTest::wilcoxon_rf,
          SimTest::ce};
}

double TestRate::rate() const {
  return n_reps > 0 ? static_cast<double>(rejections) / n_reps : 0.0;
}

double TestRate::mc_se() const {
  if (n_reps <= 0) return 0.0;
  const double r = rate();
  return std::sqrt(r * (1.0 - r) / static_cast<double>(n_reps));
}

const TestRate& ScenarioResult::rate_for(SimTest test) const {
  for (const auto& r : rates) {
    if (r.test == test) return r;
  }
  throw std::invalid_argument(std::string("no rate recorded for test ") +
                              to_string(test));
}

namespace {

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

double sign(double u) { return u > 0 ? 1.0 : (u < 0 ? -1.0 : 0.0); }

}  // namespace

double outcome_mean(Model model, double beta, double tau,
                    const Eigen::RowVectorXd& x, int z) {
  if (x.size() < 4) {
    throw std::invalid_argument("outcome_mean needs at least 4 covariates");
  }
  const double zz = static_cast<double>(z);
  switch (model) {
    case Model::m1:
      return tau * zz + beta * sigmoid(x[0] / 2.0) + beta * x[1] * x[1] +
             beta * std::cos(x[2]) + beta * x[3];
    case Model::m2:
      return tau * zz + beta * sigmoid(x[0] / 2.0) + beta * x[1] * x[1] +
             beta * std::cos(x[2]) + beta * sign(std::cos(x[2])) * x[3];
    case Model::m3:
      return tau * zz + beta * sigmoid(x[0] / 2.0) + beta * x[1] +
             beta * x[2] + beta * x[3];
    case Model::m4:
      return tau * zz + beta * (sigmoid(x[0] / 2.0) - 0.5) * zz +
             beta * x[1] * x[1] + beta * std::cos(x[2]) + beta * x[3];
  }
  throw std::invalid_argument("unknown model");
}

double sample_error(ErrorLaw law, Rng& rng) {
  switch (law) {
    case ErrorLaw::normal: return rng.normal();
    case ErrorLaw::lognormal: return rng.lognormal();
    case ErrorLaw::gumbel: return rng.gumbel();
  }
  throw std::invalid_argument("unknown error law");
}

std::uint64_t replicate_seed(std::uint64_t master_seed, long long rep) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(rep));
}

TrialDataset generate_dataset(const ScenarioConfig& config,
                              std::uint64_t data_seed) {
  if (config.p < 4) {
    throw std::invalid_argument("scenario needs p >= 4");
  }
  if (config.n < 4) {
    throw std::invalid_argument("scenario needs n >= 4");
  }
  const int n1 = config.n_treated > 0 ? config.n_treated : config.n / 2;

  Rng rng(data_seed);
  TrialDataset data;
  data.covariates.resize(config.n, config.p);
  for (int i = 0; i < config.n; ++i) {
    for (int j = 0; j < config.p; ++j) {
      data.covariates(i, j) = rng.normal();
    }
  }
  data.assignment = complete_randomization(config.n, n1, rng);
  data.outcomes.resize(config.n);
  for (int i = 0; i < config.n; ++i) {
    const double mean =
        outcome_mean(config.model, config.beta, config.tau,
                     Eigen::RowVectorXd(data.covariates.row(i)),
                     data.assignment[static_cast<std::size_t>(i)]);
    data.outcomes[i] = mean + sample_error(config.error, rng);
  }
  data.covariate_names.reserve(static_cast<std::size_t>(config.p));
  for (int j = 0; j < config.p; ++j) {
    data.covariate_names.push_back("x" + std::to_string(j + 1));
  }
  data.validate();
  return data;
}

namespace {

struct ReplicatePlan {
  std::vector<SimTest> tests;
  bool raw = false;
  bool lm = false;
  bool rf = false;
  bool ce = false;
};

ReplicatePlan make_plan(const ScenarioConfig& config) {
  ReplicatePlan plan;
  plan.tests = config.tests.empty() ? all_sim_tests() : config.tests;
  for (SimTest t : plan.tests) {
    switch (t) {
      case SimTest::t:
      case SimTest::wilcoxon: plan.raw = true; break;
      case SimTest::t_lm:
      case SimTest::wilcoxon_lm: plan.lm = true; break;
      case SimTest::t_rf:
      case SimTest::wilcoxon_rf: plan.rf = true; break;
      case SimTest::ce: plan.ce = true; break;
    }
  }
  return plan;
}

// One replicate; returns per-test rejection flags aligned with plan.tests.
std::vector<char> run_replicate(const ScenarioConfig& config,
                                const ReplicatePlan& plan, long long rep) {
  const std::uint64_t rs = replicate_seed(config.seed, rep);
  const TrialDataset data = generate_dataset(config, derive_seed(rs, 0));

  double p_raw_t = 1.0, p_raw_w = 1.0;
  double p_lm_t = 1.0, p_lm_w = 1.0;
  double p_rf_t = 1.0, p_rf_w = 1.0;
  double p_ce = 1.0;

  if (plan.raw) {
    p_raw_t = t_test(data.outcomes, data.assignment, config.sided,
                     TTestVariant::welch)
                  .p_value;
    p_raw_w =
        wilcoxon_rank_sum(data.outcomes, data.assignment, config.sided)
            .p_value;
  }
  if (plan.lm) {
    const ResidualVector e = ols_residuals(data.covariates, data.outcomes);
    p_lm_t = t_test(e.values, data.assignment, config.sided,
                    TTestVariant::welch)
                 .p_value;
    p_lm_w =
        wilcoxon_rank_sum(e.values, data.assignment, config.sided).p_value;
  }
  if (plan.rf) {
    ForestConfig fc = config.forest;
    fc.seed = derive_seed(rs, 1);
    fc.n_threads = 1;
    const ResidualVector e =
        rf_oob_residuals(data.covariates, data.outcomes, fc);
    p_rf_t = t_test(e.values, data.assignment, config.sided,
                    TTestVariant::welch)
                 .p_value;
    p_rf_w =
        wilcoxon_rank_sum(e.values, data.assignment, config.sided).p_value;
  }
  if (plan.ce) {
    ForestConfig fc = config.forest;
    fc.seed = derive_seed(rs, 2);
    fc.n_threads = 1;
    p_ce = cross_estimation(data, fc, config.ce_folds, config.sided,
                            derive_seed(rs, 3))
               .test.p_value;
  }

  std::vector<char> rejected(plan.tests.size(), 0);
  for (std::size_t k = 0; k < plan.tests.size(); ++k) {
    double p = 1.0;
    switch (plan.tests[k]) {
      case SimTest::t: p = p_raw_t; break;
      case SimTest::wilcoxon: p = p_raw_w; break;
      case SimTest::t_lm: p = p_lm_t; break;
      case SimTest::wilcoxon_lm: p = p_lm_w; break;
      case SimTest::t_rf: p = p_rf_t; break;
      case SimTest::wilcoxon_rf: p = p_rf_w; break;
      case SimTest::ce: p = p_ce; break;
    }
    rejected[k] = p <= config.alpha ? 1 : 0;
  }
  return rejected;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& config,
                            const ProgressFn& progress) {
  const auto started = std::chrono::steady_clock::now();
  if (config.n_reps < 1) {
    throw std::invalid_argument("n_reps must be at least 1");
  }
  if (!(config.alpha > 0.0 && config.alpha < 1.0)) {
    throw std::invalid_argument("alpha must be in (0, 1)");
  }
  if (config.n_treated == 0 && config.n % 2 != 0) {
    throw std::invalid_argument(
        "N must be even for balanced randomization (or set n_treated)");
  }
  const ReplicatePlan plan = make_plan(config);
  if (plan.ce) {
    const int n1 = config.n_treated > 0 ? config.n_treated : config.n / 2;
    const int smaller = std::min(n1, config.n - n1);
    if (smaller < 2 * config.ce_folds) {
      throw std::invalid_argument(
          "cross estimation needs at least 2 rows per fold in each arm");
    }
  }

  int workers = config.workers;
  if (workers == 0) {
    workers = static_cast<int>(std::thread::hardware_concurrency());
  }
  workers = std::clamp<long long>(workers, 1, config.n_reps);

  const auto n_tests = plan.tests.size();
  std::vector<std::vector<long long>> worker_counts(
      static_cast<std::size_t>(workers),
      std::vector<long long>(n_tests, 0));

  std::atomic<long long> next{0};
  std::atomic<long long> completed{0};
  std::atomic<bool> failed{false};
  std::mutex report_mutex;
  long long failed_rep = -1;
  std::string failure;

  auto work = [&](int w) {
    auto& counts = worker_counts[static_cast<std::size_t>(w)];
    for (;;) {
      const long long rep = next.fetch_add(1);
      if (rep >= config.n_reps || failed.load()) return;
      try {
        const std::vector<char> rejected = run_replicate(config, plan, rep);
        for (std::size_t k = 0; k < n_tests; ++k) {
          counts[k] += rejected[k];
        }
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(report_mutex);
        if (failed_rep < 0 || rep < failed_rep) {
          failed_rep = rep;
          failure = ex.what();
        }
        failed.store(true);
        return;
      }
      const long long done = completed.fetch_add(1) + 1;
      if (progress && (done % 50 == 0 || done == config.n_reps)) {
        std::lock_guard<std::mutex> lock(report_mutex);
        progress(done, config.n_reps);
      }
    }
  };

  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }

  if (failed.load()) {
    throw std::runtime_error("replicate " + std::to_string(failed_rep) +
                             " failed: " + failure);
  }

  ScenarioResult result;
  result.config = config;
  result.config.tests = plan.tests;
  result.rates.resize(n_tests);
  for (std::size_t k = 0; k < n_tests; ++k) {
    result.rates[k].test = plan.tests[k];
    result.rates[k].n_reps = config.n_reps;
    for (int w = 0; w < workers; ++w) {
      result.rates[k].rejections +=
          worker_counts[static_cast<std::size_t>(w)][k];
    }
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return result;
}

PowerCurve power_curve(const ScenarioConfig& base,
                       const std::vector<int>& n_grid,
                       const ProgressFn& progress) {
  if (n_grid.empty()) {
    throw std::invalid_argument("power curve needs a nonempty n grid");
  }
  PowerCurve curve;
  curve.n_grid = n_grid;
  const long long total =
      base.n_reps * static_cast<long long>(n_grid.size());
  for (std::size_t c = 0; c < n_grid.size(); ++c) {
    ScenarioConfig cell = base;
    cell.n = n_grid[c];
    cell.n_treated = 0;
    ProgressFn cell_progress;
    if (progress) {
      const long long offset = base.n_reps * static_cast<long long>(c);
      cell_progress = [&, offset](long long done, long long) {
        progress(offset + done, total);
      };
    }
    curve.results.push_back(run_scenario(cell, cell_progress));
  }
  return curve;
}

std::optional<int> first_crossing(const PowerCurve& curve, SimTest test,
                                  double target) {
  for (std::size_t c = 0; c < curve.results.size(); ++c) {
    if (curve.results[c].rate_for(test).rate() >= target) {
      return curve.n_grid[c];
    }
  }
  return std::nullopt;
}

}  // namespace rfinfer
