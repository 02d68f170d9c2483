#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "rfinfer/rng.hpp"

namespace rfinfer {

// Records how the regression function g was evaluated when a residual vector
// was produced, so adjusted analyses can be audited for overfitting leakage.
enum class ResidualSource { oob_forest, insample_forest, ols, none };

const char* to_string(ResidualSource source);

struct ResidualVector {
  Eigen::VectorXd values;
  ResidualSource source = ResidualSource::none;
  bool degenerate = false;  // set by the OLS residualizer on rank-deficient fits
};

// One completed two-arm randomized trial: n subjects, p numeric baseline
// covariates, observed outcomes and a 0/1 treatment assignment. Immutable by
// convention after construction; safe to share across threads.
struct TrialDataset {
  Eigen::MatrixXd covariates;  // n x p
  Eigen::VectorXd outcomes;    // length n
  std::vector<int> assignment;  // length n, entries 0 or 1
  std::vector<std::string> covariate_names;  // empty unless loaded from a file

  int n() const { return static_cast<int>(outcomes.size()); }
  int p() const { return static_cast<int>(covariates.cols()); }
  int n_treated() const;
  int n_control() const { return n() - n_treated(); }

  // Throws std::invalid_argument on any violated invariant: n >= 4, shapes
  // consistent, both arms nonempty, all entries finite, assignment in {0,1}.
  void validate() const;
};

// Y_i = R_i - tau0 * Z_i, the response used for testing H0: tau = tau0.
Eigen::VectorXd adjusted_response(const TrialDataset& dataset, double tau0);

// Loads a trial from CSV: header row required, '.' decimal separator, UTF-8.
// The named outcome and assignment columns are extracted; every remaining
// column must be numeric and becomes a covariate, in file order.
// Throws std::runtime_error with the offending row/column on parse failures
// and std::invalid_argument on validation failures.
TrialDataset load_trial_csv(const std::string& path,
                            const std::string& outcome_column,
                            const std::string& assignment_column);

// Uniform draw from all C(n, n1) assignments with exactly n1 ones.
std::vector<int> complete_randomization(int n, int n1, Rng& rng);

}  // namespace rfinfer
