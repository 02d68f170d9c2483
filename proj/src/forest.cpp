#include "rfinfer/forest.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <utility>

#include "rfinfer/rng.hpp"

namespace rfinfer {

int ForestConfig::resolved_mtry(int p) const {
  if (mtry > 0) return std::min(mtry, p);
  return std::max(1, p / 3);
}

double RegressionTree::predict(const double* x) const {
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(node)];
    node = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(node)].value;
}

namespace {

struct WorkItem {
  int parent;  // -1 for root
  bool is_left;
  int lo;  // range in the in-bag row buffer
  int hi;
  int depth;
};

// Grows one tree; scratch buffers are reused across trees on the same thread.
class TreeBuilder {
 public:
  TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
              const ForestConfig& config, int mtry)
      : X_(X), y_(y), config_(config), mtry_(mtry),
        n_(static_cast<int>(X.rows())), p_(static_cast<int>(X.cols())) {
    rows_.reserve(static_cast<std::size_t>(n_));
    features_.resize(static_cast<std::size_t>(p_));
    pairs_.reserve(static_cast<std::size_t>(n_));
  }

  void build(std::uint64_t seed, RegressionTree& tree,
             std::vector<int>& inbag, std::vector<double>& gain) {
    Rng rng(seed);
    inbag.assign(static_cast<std::size_t>(n_), 0);
    if (config_.bootstrap) {
      for (int i = 0; i < n_; ++i) {
        ++inbag[rng.below(static_cast<std::uint64_t>(n_))];
      }
    } else {
      std::fill(inbag.begin(), inbag.end(), 1);
    }
    rows_.clear();
    for (int i = 0; i < n_; ++i) {
      for (int c = 0; c < inbag[static_cast<std::size_t>(i)]; ++c) {
        rows_.push_back(i);
      }
    }

    tree.nodes.clear();
    stack_.clear();
    stack_.push_back({-1, false, 0, static_cast<int>(rows_.size()), 0});
    while (!stack_.empty()) {
      const WorkItem item = stack_.back();
      stack_.pop_back();
      const int node_index = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      if (item.parent >= 0) {
        TreeNode& parent = tree.nodes[static_cast<std::size_t>(item.parent)];
        (item.is_left ? parent.left : parent.right) = node_index;
      }
      grow_node(rng, tree, node_index, item, gain);
    }
  }

 private:
  void grow_node(Rng& rng, RegressionTree& tree, int node_index,
                 const WorkItem& item, std::vector<double>& gain) {
    const int k = item.hi - item.lo;
    double sum = 0.0;
    for (int i = item.lo; i < item.hi; ++i) {
      sum += y_[rows_[static_cast<std::size_t>(i)]];
    }
    TreeNode& node = tree.nodes[static_cast<std::size_t>(node_index)];
    node.value = sum / k;
    node.count = k;

    if (k < 2 * config_.min_leaf) return;
    if (config_.max_depth > 0 && item.depth >= config_.max_depth) return;

    // mtry features without replacement, searched in ascending index order so
    // ties resolve to the lowest feature, then the lowest threshold.
    std::iota(features_.begin(), features_.end(), 0);
    for (int j = 0; j < mtry_; ++j) {
      const auto pick =
          j + static_cast<int>(rng.below(static_cast<std::uint64_t>(p_ - j)));
      std::swap(features_[static_cast<std::size_t>(j)],
                features_[static_cast<std::size_t>(pick)]);
    }
    std::sort(features_.begin(), features_.begin() + mtry_);

    const double parent_score = sum * sum / k;
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    for (int j = 0; j < mtry_; ++j) {
      const int f = features_[static_cast<std::size_t>(j)];
      pairs_.clear();
      for (int i = item.lo; i < item.hi; ++i) {
        const int row = rows_[static_cast<std::size_t>(i)];
        pairs_.emplace_back(X_(row, f), y_[row]);
      }
      std::sort(pairs_.begin(), pairs_.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      if (pairs_.front().first == pairs_.back().first) continue;

      double left_sum = 0.0;
      for (int i = 0; i + 1 < k; ++i) {
        left_sum += pairs_[static_cast<std::size_t>(i)].second;
        const double xv = pairs_[static_cast<std::size_t>(i)].first;
        const double xn = pairs_[static_cast<std::size_t>(i + 1)].first;
        if (xv == xn) continue;
        const int n_left = i + 1;
        const int n_right = k - n_left;
        if (n_left < config_.min_leaf) continue;
        if (n_right < config_.min_leaf) break;
        const double right_sum = sum - left_sum;
        const double score =
            left_sum * left_sum / n_left + right_sum * right_sum / n_right;
        const double g = score - parent_score;
        if (g > best_gain) {
          best_gain = g;
          best_feature = f;
          double mid = 0.5 * (xv + xn);
          // keep the scored partition: x <= threshold must send exactly the
          // first n_left sorted rows left
          if (!(mid < xn)) mid = xv;
          best_threshold = mid;
        }
      }
    }

    if (best_feature < 0) return;
    gain[static_cast<std::size_t>(best_feature)] += best_gain;
    node.feature = best_feature;
    node.threshold = best_threshold;

    const auto first = rows_.begin() + item.lo;
    const auto last = rows_.begin() + item.hi;
    const auto split = std::partition(first, last, [&](int row) {
      return X_(row, best_feature) <= best_threshold;
    });
    const int mid = item.lo + static_cast<int>(split - first);
    // right pushed first so the left child is grown (and numbered) first
    stack_.push_back({node_index, false, mid, item.hi, item.depth + 1});
    stack_.push_back({node_index, true, item.lo, mid, item.depth + 1});
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& y_;
  const ForestConfig& config_;
  const int mtry_;
  const int n_;
  const int p_;
  std::vector<int> rows_;
  std::vector<int> features_;
  std::vector<std::pair<double, double>> pairs_;
  std::vector<WorkItem> stack_;
};

}  // namespace

ForestModel fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                       const ForestConfig& config) {
  const auto n = static_cast<int>(X.rows());
  const auto p = static_cast<int>(X.cols());
  if (n < 2 || p < 1 || y.size() != n) {
    throw std::invalid_argument("fit_forest: bad shapes");
  }
  if (config.n_trees < 1 || config.min_leaf < 1) {
    throw std::invalid_argument("fit_forest: bad config");
  }

  ForestModel model;
  model.config = config;
  model.config.mtry = config.resolved_mtry(p);
  model.n_features = p;
  model.y_mean = y.mean();
  model.trees.resize(static_cast<std::size_t>(config.n_trees));
  model.inbag_counts.resize(static_cast<std::size_t>(config.n_trees));

  const int T = config.n_trees;
  std::vector<std::vector<double>> tree_gain(
      static_cast<std::size_t>(T),
      std::vector<double>(static_cast<std::size_t>(p), 0.0));

  auto fit_range = [&](int lo, int hi) {
    TreeBuilder builder(X, y, model.config, model.config.mtry);
    for (int t = lo; t < hi; ++t) {
      builder.build(derive_seed(config.seed, static_cast<std::uint64_t>(t)),
                    model.trees[static_cast<std::size_t>(t)],
                    model.inbag_counts[static_cast<std::size_t>(t)],
                    tree_gain[static_cast<std::size_t>(t)]);
    }
  };

  int threads = config.n_threads;
  if (threads == 0) {
    threads = static_cast<int>(std::thread::hardware_concurrency());
  }
  threads = std::clamp(threads, 1, T);
  if (threads == 1) {
    fit_range(0, T);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    const int per = (T + threads - 1) / threads;
    for (int w = 0; w < threads; ++w) {
      const int lo = w * per;
      const int hi = std::min(T, lo + per);
      if (lo >= hi) break;
      pool.emplace_back(fit_range, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  // summed in tree order so the result is independent of the thread split
  model.split_gain.assign(static_cast<std::size_t>(p), 0.0);
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < p; ++f) {
      model.split_gain[static_cast<std::size_t>(f)] +=
          tree_gain[static_cast<std::size_t>(t)][static_cast<std::size_t>(f)];
    }
  }
  return model;
}

OobPrediction oob_predict(const ForestModel& model, const Eigen::MatrixXd& X) {
  const auto n = static_cast<int>(X.rows());
  if (static_cast<int>(X.cols()) != model.n_features) {
    throw std::invalid_argument("oob_predict: feature count mismatch");
  }
  if (!model.inbag_counts.empty() &&
      static_cast<int>(model.inbag_counts.front().size()) != n) {
    throw std::invalid_argument(
        "oob_predict: X must be the training matrix (row count mismatch)");
  }
  OobPrediction out;
  out.predictions.resize(n);
  Eigen::VectorXd row(model.n_features);
  for (int i = 0; i < n; ++i) {
    row = X.row(i);
    double sum = 0.0;
    int count = 0;
    for (std::size_t t = 0; t < model.trees.size(); ++t) {
      if (model.inbag_counts[t][static_cast<std::size_t>(i)] == 0) {
        sum += model.trees[t].predict(row.data());
        ++count;
      }
    }
    if (count == 0) {
      out.predictions[i] = model.y_mean;
      out.never_oob.push_back(i);
    } else {
      out.predictions[i] = sum / count;
    }
  }
  return out;
}

Eigen::VectorXd predict(const ForestModel& model, const Eigen::MatrixXd& X) {
  const auto n = static_cast<int>(X.rows());
  if (static_cast<int>(X.cols()) != model.n_features) {
    throw std::invalid_argument("predict: feature count mismatch");
  }
  Eigen::VectorXd out(n);
  Eigen::VectorXd row(model.n_features);
  for (int i = 0; i < n; ++i) {
    row = X.row(i);
    double sum = 0.0;
    for (const auto& tree : model.trees) {
      sum += tree.predict(row.data());
    }
    out[i] = sum / static_cast<double>(model.trees.size());
  }
  return out;
}

double predict_row(const ForestModel& model, const Eigen::VectorXd& x) {
  if (static_cast<int>(x.size()) != model.n_features) {
    throw std::invalid_argument("predict_row: feature count mismatch");
  }
  double sum = 0.0;
  for (const auto& tree : model.trees) {
    sum += tree.predict(x.data());
  }
  return sum / static_cast<double>(model.trees.size());
}

std::vector<double> variable_importance(const ForestModel& model) {
  std::vector<double> imp = model.split_gain;
  const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (total > 0.0) {
    for (double& v : imp) v /= total;
  }
  return imp;
}

std::string dump_forest(const ForestModel& model) {
  std::ostringstream os;
  os << "forest: " << model.trees.size() << " trees, " << model.n_features
     << " features, mtry " << model.config.mtry << ", min_leaf "
     << model.config.min_leaf << "\n";
  for (std::size_t t = 0; t < model.trees.size(); ++t) {
    const auto& nodes = model.trees[t].nodes;
    std::size_t leaves = 0;
    for (const auto& nd : nodes) {
      if (nd.feature < 0) ++leaves;
    }
    os << "tree " << t << ": " << nodes.size() << " nodes, " << leaves
       << " leaves\n";
  }
  return os.str();
}

}  // namespace rfinfer
