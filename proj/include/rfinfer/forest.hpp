#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rfinfer {

struct ForestConfig {
  int n_trees = 500;
  int mtry = 0;       // 0: use max(1, p / 3)
  int min_leaf = 5;   // minimum in-bag rows per leaf
  int max_depth = 0;  // 0: unlimited
  std::uint64_t seed = 0;
  bool bootstrap = true;  // false: every tree trains on the full sample
  int n_threads = 1;      // 0: hardware concurrency

  int resolved_mtry(int p) const;
};

// Internal node when feature >= 0 (x[feature] <= threshold goes left),
// leaf otherwise. value is the mean of in-bag responses routed here and
// count is how many in-bag rows (with bootstrap multiplicity) that was.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  double value = 0.0;
  int count = 0;
  int left = -1;
  int right = -1;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;

  double predict(const double* x) const;
};

struct ForestModel {
  ForestConfig config;  // with mtry resolved
  int n_features = 0;
  double y_mean = 0.0;
  std::vector<RegressionTree> trees;
  // inbag_counts[t][i]: times row i was drawn into tree t's bootstrap sample
  std::vector<std::vector<int>> inbag_counts;
  // summed squared-error reduction per feature, unnormalized
  std::vector<double> split_gain;
};

struct OobPrediction {
  Eigen::VectorXd predictions;
  // rows never out of bag; their prediction falls back to the training mean
  std::vector<int> never_oob;
};

ForestModel fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const ForestConfig& config);

// X must be the training matrix in training row order.
OobPrediction oob_predict(const ForestModel& model, const Eigen::MatrixXd& X);

Eigen::VectorXd predict(const ForestModel& model, const Eigen::MatrixXd& X);

double predict_row(const ForestModel& model, const Eigen::VectorXd& x);

// Per-feature share of total split gain; sums to 1 unless no split exists.
std::vector<double> variable_importance(const ForestModel& model);

// Compact text description: a summary line, then one line per tree.
std::string dump_forest(const ForestModel& model);

}  // namespace rfinfer
