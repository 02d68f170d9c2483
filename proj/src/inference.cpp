#include "rfinfer/inference.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

#include "rfinfer/rng.hpp"

namespace rfinfer {

const char* to_string(VarianceConvention convention) {
  switch (convention) {
    case VarianceConvention::finite_population: return "finite-population";
    case VarianceConvention::bernoulli: return "bernoulli";
  }
  return "unknown";
}

const char* to_string(TestKind kind) {
  switch (kind) {
    case TestKind::t: return "t";
    case TestKind::wilcoxon: return "wilcoxon";
    case TestKind::permutation: return "permutation";
  }
  return "unknown";
}

const char* to_string(CiMethod method) {
  switch (method) {
    case CiMethod::t_residual: return "t-residual";
    case CiMethod::test_inversion: return "test-inversion";
  }
  return "unknown";
}

namespace {

double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

struct ArmCounts {
  int n1 = 0;
  int n0 = 0;
};

ArmCounts arm_counts(const Eigen::VectorXd& values,
                     const std::vector<int>& assignment) {
  if (values.size() != static_cast<Eigen::Index>(assignment.size())) {
    throw std::invalid_argument("residuals and assignment length mismatch");
  }
  ArmCounts c;
  for (int z : assignment) {
    if (z == 1) {
      ++c.n1;
    } else {
      ++c.n0;
    }
  }
  if (c.n1 < 1 || c.n0 < 1) {
    throw std::invalid_argument("both arms must be nonempty");
  }
  return c;
}

double mean_difference(const Eigen::VectorXd& values,
                       const std::vector<int>& assignment, int n1, int n0) {
  double sum1 = 0.0, sum0 = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (assignment[static_cast<std::size_t>(i)] == 1) {
      sum1 += values[i];
    } else {
      sum0 += values[i];
    }
  }
  return sum1 / n1 - sum0 / n0;
}

}  // namespace

double residual_variance(const Eigen::VectorXd& residuals,
                         const std::vector<int>& assignment,
                         VarianceConvention convention) {
  const ArmCounts c = arm_counts(residuals, assignment);
  const auto n = static_cast<double>(residuals.size());
  const double n1n0 = static_cast<double>(c.n1) * c.n0;
  if (convention == VarianceConvention::bernoulli) {
    return residuals.squaredNorm() / n1n0;
  }
  if (residuals.size() < 2) {
    throw std::invalid_argument("finite-population variance needs n >= 2");
  }
  const double centered_ss =
      (residuals.array() - residuals.mean()).square().sum();
  return n / ((n - 1.0) * n1n0) * centered_ss;
}

EffectEstimate estimate_effect(const Eigen::VectorXd& residuals,
                               const std::vector<int>& assignment,
                               VarianceConvention convention) {
  const ArmCounts c = arm_counts(residuals, assignment);
  EffectEstimate est;
  est.tau_hat = mean_difference(residuals, assignment, c.n1, c.n0);
  est.convention = convention;
  est.variance = residual_variance(residuals, assignment, convention);
  est.std_error = std::sqrt(est.variance);
  return est;
}

ResidualVector rf_oob_residuals(const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& y,
                                const ForestConfig& config,
                                ForestDiagnostics* diagnostics) {
  const ForestModel model = fit_forest(X, y, config);
  const OobPrediction oob = oob_predict(model, X);
  ResidualVector out;
  out.values = y - oob.predictions;
  out.source = ResidualSource::oob_forest;
  out.degenerate = !oob.never_oob.empty();
  if (diagnostics != nullptr) {
    diagnostics->importance = variable_importance(model);
    diagnostics->never_oob = static_cast<int>(oob.never_oob.size());
    const double total_ss = (y.array() - y.mean()).square().sum();
    diagnostics->oob_r_squared =
        total_ss > 0.0 ? 1.0 - out.values.squaredNorm() / total_ss : 0.0;
  }
  return out;
}

namespace {

TestResult run_residual_test(const Eigen::VectorXd& residuals,
                             const std::vector<int>& assignment,
                             const AnalysisOptions& options) {
  switch (options.test) {
    case TestKind::t:
      return t_test(residuals, assignment, options.sided, options.t_variant);
    case TestKind::wilcoxon:
      return wilcoxon_rank_sum(residuals, assignment, options.sided);
    case TestKind::permutation:
      return permutation_test(residuals, assignment, options.sided,
                              options.permutation);
  }
  throw std::invalid_argument("unknown test kind");
}

using ResidualFn = std::function<ResidualVector(double tau0)>;

ConfidenceInterval t_residual_ci(const EffectEstimate& est, int n,
                                 double level) {
  if (n < 3) {
    throw std::invalid_argument("t-residual interval needs n >= 3");
  }
  boost::math::students_t_distribution<double> dist(n - 2);
  const double q = boost::math::quantile(dist, 0.5 + level / 2.0);
  ConfidenceInterval ci;
  ci.level = level;
  ci.method = CiMethod::t_residual;
  ci.lower = est.tau_hat - q * est.std_error;
  ci.upper = est.tau_hat + q * est.std_error;
  return ci;
}

// Bisects each side for the null value where the two-sided p-value crosses
// alpha = 1 - level. Every probe recomputes residuals at the probed null.
ConfidenceInterval invert_test_ci(const ResidualFn& residuals_at,
                                  const std::vector<int>& assignment,
                                  const AnalysisOptions& options,
                                  double tau_hat, double level) {
  const double alpha = 1.0 - level;
  AnalysisOptions probe_options = options;
  probe_options.sided = Sided::two_sided;
  auto p_at = [&](double tau0) {
    const ResidualVector e = residuals_at(tau0);
    return run_residual_test(e.values, assignment, probe_options).p_value;
  };

  const ResidualVector center = residuals_at(tau_hat);
  const auto n = static_cast<double>(center.values.size());
  const double sd = std::sqrt(
      (center.values.array() - center.values.mean()).square().sum() /
      (n - 1.0));
  if (!(sd > 0.0)) {
    throw std::runtime_error("test inversion failed: residuals are constant");
  }
  if (p_at(tau_hat) < alpha) {
    throw std::runtime_error(
        "test inversion failed: point estimate already rejected");
  }
  const double tol = 1e-3 * sd;
  const double reach = 10.0 * sd;

  auto bisect_side = [&](double direction) {
    double inside = tau_hat;            // not rejected
    double outside = tau_hat + direction * reach;  // must be rejected
    if (p_at(outside) >= alpha) {
      throw std::runtime_error(
          "test inversion failed: bracket end is not rejected");
    }
    while (std::fabs(outside - inside) > tol) {
      const double mid = 0.5 * (inside + outside);
      if (p_at(mid) >= alpha) {
        inside = mid;
      } else {
        outside = mid;
      }
    }
    return 0.5 * (inside + outside);
  };

  ConfidenceInterval ci;
  ci.level = level;
  ci.method = CiMethod::test_inversion;
  ci.lower = bisect_side(-1.0);
  ci.upper = bisect_side(1.0);
  return ci;
}

AdjustedAnalysis analyze_with(const TrialDataset& data,
                              const AnalysisOptions& options,
                              const ResidualFn& residuals_at,
                              ForestDiagnostics diagnostics) {
  AdjustedAnalysis out;
  out.forest = std::move(diagnostics);
  out.residuals = residuals_at(options.tau0);
  out.test = run_residual_test(out.residuals.values, data.assignment, options);
  out.estimate = estimate_effect(out.residuals.values, data.assignment,
                                 options.convention);
  out.estimate.tau_hat += options.tau0;
  if (options.ci_level) {
    const double level = *options.ci_level;
    if (!(level > 0.0 && level < 1.0)) {
      throw std::invalid_argument("ci level must be in (0, 1)");
    }
    if (options.ci_method == CiMethod::t_residual) {
      out.estimate.ci =
          t_residual_ci(out.estimate, static_cast<int>(data.n()), level);
    } else {
      out.estimate.ci = invert_test_ci(residuals_at, data.assignment, options,
                                       out.estimate.tau_hat, level);
    }
  }
  return out;
}

}  // namespace

AdjustedAnalysis rf_adjusted_test(const TrialDataset& data,
                                  const ForestConfig& config,
                                  const AnalysisOptions& options) {
  data.validate();
  ForestDiagnostics diag;
  bool first_fit = true;
  ResidualFn residuals_at = [&, first_fit](double tau0) mutable {
    const Eigen::VectorXd y = adjusted_response(data, tau0);
    ResidualVector e =
        rf_oob_residuals(data.covariates, y, config,
                         first_fit ? &diag : nullptr);
    first_fit = false;
    return e;
  };
  // evaluate once so diagnostics reflect the tau0 fit
  residuals_at(options.tau0);
  return analyze_with(data, options, residuals_at, diag);
}

AdjustedAnalysis ols_adjusted_test(const TrialDataset& data,
                                   const AnalysisOptions& options) {
  data.validate();
  ResidualFn residuals_at = [&](double tau0) {
    const Eigen::VectorXd y = adjusted_response(data, tau0);
    return ols_residuals(data.covariates, y);
  };
  return analyze_with(data, options, residuals_at, {});
}

AdjustedAnalysis unadjusted_test(const TrialDataset& data,
                                 const AnalysisOptions& options) {
  data.validate();
  ResidualFn residuals_at = [&](double tau0) {
    ResidualVector e;
    e.values = adjusted_response(data, tau0);
    e.source = ResidualSource::none;
    return e;
  };
  return analyze_with(data, options, residuals_at, {});
}

BiasDiagnostic overfitting_bias_diagnostic(const TrialDataset& data,
                                           const ForestConfig& config) {
  data.validate();
  const ForestModel model = fit_forest(data.covariates, data.outcomes, config);
  const ArmCounts c = arm_counts(data.outcomes, data.assignment);

  BiasDiagnostic diag;
  const Eigen::VectorXd insample =
      data.outcomes - predict(model, data.covariates);
  diag.insample_estimate =
      mean_difference(insample, data.assignment, c.n1, c.n0);
  const Eigen::VectorXd oob =
      data.outcomes - oob_predict(model, data.covariates).predictions;
  diag.oob_estimate = mean_difference(oob, data.assignment, c.n1, c.n0);
  return diag;
}

CrossEstimate cross_estimation_from_predictions(
    const Eigen::VectorXd& y, const std::vector<int>& assignment,
    const Eigen::VectorXd& g0, const Eigen::VectorXd& g1, Sided sided) {
  const auto n = y.size();
  if (g0.size() != n || g1.size() != n ||
      static_cast<Eigen::Index>(assignment.size()) != n) {
    throw std::invalid_argument("cross estimation: length mismatch");
  }
  const ArmCounts c = arm_counts(y, assignment);
  if (c.n1 < 2 || c.n0 < 2) {
    throw std::invalid_argument("cross estimation needs 2 subjects per arm");
  }
  const double share_treated = static_cast<double>(c.n1) / n;

  double imputed = 0.0, resid1 = 0.0, resid0 = 0.0;
  double ss1 = 0.0, ss0 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    imputed += g1[i] - g0[i];
    const double cross =
        y[i] - (1.0 - share_treated) * g1[i] - share_treated * g0[i];
    if (assignment[static_cast<std::size_t>(i)] == 1) {
      resid1 += y[i] - g1[i];
      ss1 += cross * cross;
    } else {
      resid0 += y[i] - g0[i];
      ss0 += cross * cross;
    }
  }

  CrossEstimate est;
  est.tau_hat = imputed / n + resid1 / c.n1 - resid0 / c.n0;
  est.variance = ss1 / (static_cast<double>(c.n1) * (c.n1 - 1)) +
                 ss0 / (static_cast<double>(c.n0) * (c.n0 - 1));
  est.std_error = std::sqrt(est.variance);

  est.test.method = TestMethod::z;
  est.test.sided = sided;
  est.test.exact = false;
  if (est.std_error > 0.0) {
    est.test.statistic = est.tau_hat / est.std_error;
    switch (sided) {
      case Sided::greater:
        est.test.p_value = normal_sf(est.test.statistic);
        break;
      case Sided::less:
        est.test.p_value = 1.0 - normal_sf(est.test.statistic);
        break;
      case Sided::two_sided:
        est.test.p_value =
            std::min(1.0, 2.0 * normal_sf(std::fabs(est.test.statistic)));
        break;
    }
  } else {
    est.test.degenerate = true;
    est.test.p_value = est.tau_hat == 0.0 ? 1.0 : 0.0;
  }
  return est;
}

CrossEstimate cross_estimation(const TrialDataset& data,
                               const ForestConfig& config, int folds,
                               Sided sided, std::uint64_t fold_seed) {
  data.validate();
  if (folds < 2) {
    throw std::invalid_argument("cross estimation needs at least 2 folds");
  }
  const auto n = static_cast<int>(data.n());
  const auto p = data.p();

  Eigen::VectorXd g[2];
  g[0] = Eigen::VectorXd::Zero(n);
  g[1] = Eigen::VectorXd::Zero(n);

  for (int arm = 0; arm < 2; ++arm) {
    std::vector<int> members;
    std::vector<int> others;
    for (int i = 0; i < n; ++i) {
      (data.assignment[static_cast<std::size_t>(i)] == arm ? members : others)
          .push_back(i);
    }
    const auto m = static_cast<int>(members.size());
    if (m < 2 * folds) {
      throw std::invalid_argument(
          "cross estimation: arm too small for the fold count");
    }
    Rng rng(derive_seed(fold_seed, static_cast<std::uint64_t>(arm)));
    for (int i = m - 1; i > 0; --i) {
      const auto j =
          static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
      std::swap(members[static_cast<std::size_t>(i)],
                members[static_cast<std::size_t>(j)]);
    }

    // fold f holds shuffled positions [f*m/folds, (f+1)*m/folds)
    Eigen::MatrixXd other_rows(others.size(), p);
    for (std::size_t r = 0; r < others.size(); ++r) {
      other_rows.row(static_cast<Eigen::Index>(r)) =
          data.covariates.row(others[r]);
    }
    Eigen::VectorXd other_sum = Eigen::VectorXd::Zero(
        static_cast<Eigen::Index>(others.size()));
    for (int f = 0; f < folds; ++f) {
      const int lo = f * m / folds;
      const int hi = (f + 1) * m / folds;
      Eigen::MatrixXd train_x(m - (hi - lo), p);
      Eigen::VectorXd train_y(m - (hi - lo));
      Eigen::Index r = 0;
      for (int idx = 0; idx < m; ++idx) {
        if (idx >= lo && idx < hi) continue;
        train_x.row(r) = data.covariates.row(members[static_cast<std::size_t>(idx)]);
        train_y[r] = data.outcomes[members[static_cast<std::size_t>(idx)]];
        ++r;
      }
      ForestConfig fold_config = config;
      fold_config.seed = derive_seed(
          config.seed, static_cast<std::uint64_t>(arm * folds + f));
      const ForestModel model = fit_forest(train_x, train_y, fold_config);

      Eigen::VectorXd row(p);
      for (int idx = lo; idx < hi; ++idx) {
        const int i = members[static_cast<std::size_t>(idx)];
        row = data.covariates.row(i);
        g[arm][i] = predict_row(model, row);
      }
      other_sum += predict(model, other_rows);
    }
    for (std::size_t r = 0; r < others.size(); ++r) {
      g[arm][others[r]] = other_sum[static_cast<Eigen::Index>(r)] / folds;
    }
  }

  return cross_estimation_from_predictions(data.outcomes, data.assignment,
                                           g[0], g[1], sided);
}

double sample_size_reduction(int n, double gamma) {
  if (n < 1) {
    throw std::invalid_argument("n must be positive");
  }
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw std::invalid_argument("gamma must be in [0, 1)");
  }
  return static_cast<double>(n) * gamma;
}

}  // namespace rfinfer
