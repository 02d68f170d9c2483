#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "rfinfer/forest.hpp"
#include "rfinfer/stat_tests.hpp"
#include "rfinfer/trial_data.hpp"

namespace rfinfer {

enum class VarianceConvention {
  // exact variance of the mean difference under complete randomization
  finite_population,
  // sum(e^2) / (n1 * n0), the Bernoulli-design convention
  bernoulli,
};

enum class TestKind { t, wilcoxon, permutation };

enum class CiMethod { t_residual, test_inversion };

const char* to_string(VarianceConvention convention);
const char* to_string(TestKind kind);
const char* to_string(CiMethod method);

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  CiMethod method = CiMethod::t_residual;
};

struct EffectEstimate {
  double tau_hat = 0.0;
  double variance = 0.0;
  double std_error = 0.0;
  VarianceConvention convention = VarianceConvention::finite_population;
  std::optional<ConfidenceInterval> ci;
};

struct ForestDiagnostics {
  std::vector<double> importance;  // normalized split-gain shares
  int never_oob = 0;
  // 1 - sum(e^2) / sum((y - mean(y))^2); negative when the forest predicts
  // worse than the mean
  double oob_r_squared = 0.0;
};

struct AnalysisOptions {
  TestKind test = TestKind::wilcoxon;
  Sided sided = Sided::two_sided;
  TTestVariant t_variant = TTestVariant::welch;
  VarianceConvention convention = VarianceConvention::finite_population;
  double tau0 = 0.0;  // null effect removed before residualization
  PermutationMode permutation = PermutationMode::Exact();
  std::optional<double> ci_level;  // set to request an interval
  CiMethod ci_method = CiMethod::t_residual;
};

struct AdjustedAnalysis {
  TestResult test;
  EffectEstimate estimate;
  ResidualVector residuals;
  ForestDiagnostics forest;  // populated only for forest residualization
};

double residual_variance(const Eigen::VectorXd& residuals,
                         const std::vector<int>& assignment,
                         VarianceConvention convention);

// Mean difference of residuals plus its variance under the chosen convention.
EffectEstimate estimate_effect(const Eigen::VectorXd& residuals,
                               const std::vector<int>& assignment,
                               VarianceConvention convention);

// Out-of-bag residuals y - g(x) from a forest fit without the assignment.
// Rows never out of bag fall back to the training mean and set `degenerate`.
ResidualVector rf_oob_residuals(const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& y,
                                const ForestConfig& config,
                                ForestDiagnostics* diagnostics = nullptr);

// Full pipeline: remove tau0 * z, residualize, test, estimate.
AdjustedAnalysis rf_adjusted_test(const TrialDataset& data,
                                  const ForestConfig& config,
                                  const AnalysisOptions& options);
AdjustedAnalysis ols_adjusted_test(const TrialDataset& data,
                                   const AnalysisOptions& options);
AdjustedAnalysis unadjusted_test(const TrialDataset& data,
                                 const AnalysisOptions& options);

struct BiasDiagnostic {
  double insample_estimate = 0.0;  // residuals from resubstitution predictions
  double oob_estimate = 0.0;
};

// Contrasts the effect estimate from in-sample residuals with the one from
// out-of-bag residuals; the gap measures overfitting shrinkage.
BiasDiagnostic overfitting_bias_diagnostic(const TrialDataset& data,
                                           const ForestConfig& config);

struct CrossEstimate {
  double tau_hat = 0.0;
  double variance = 0.0;
  double std_error = 0.0;
  TestResult test;  // z-test of a zero effect
};

// Imputation estimator with per-arm cross-fitting: each arm's outcome model
// is fit on folds that exclude the predicted row.
CrossEstimate cross_estimation(const TrialDataset& data,
                               const ForestConfig& config, int folds,
                               Sided sided, std::uint64_t fold_seed);

// Same estimator with caller-supplied per-arm predictions g0, g1.
CrossEstimate cross_estimation_from_predictions(
    const Eigen::VectorXd& y, const std::vector<int>& assignment,
    const Eigen::VectorXd& g0, const Eigen::VectorXd& g1, Sided sided);

// First-order planning heuristic: covariate adjustment explaining a fraction
// gamma of outcome variance saves about n * gamma subjects. gamma in [0, 1).
double sample_size_reduction(int n, double gamma);

}  // namespace rfinfer
