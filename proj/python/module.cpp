// Python bindings for the adjusted-inference core. Spellings of the string
// options match the command-line interface ("two-sided", "finite-population",
// "wilcoxon-rf", ...) so results are comparable across the two frontends.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rfinfer/inference.hpp"

namespace py = pybind11;
using namespace rfinfer;

namespace {

TestKind parse_test(const std::string& s) {
  if (s == "t") return TestKind::t;
  if (s == "wilcoxon") return TestKind::wilcoxon;
  if (s == "permutation") return TestKind::permutation;
  throw std::invalid_argument("unknown test '" + s +
                              "' (expected t, wilcoxon or permutation)");
}

VarianceConvention parse_convention(const std::string& s) {
  if (s == "finite-population") return VarianceConvention::finite_population;
  if (s == "bernoulli") return VarianceConvention::bernoulli;
  throw std::invalid_argument("unknown variance convention '" + s + "'");
}

TTestVariant parse_variant(const std::string& s) {
  if (s == "pooled") return TTestVariant::pooled;
  if (s == "welch") return TTestVariant::welch;
  throw std::invalid_argument("unknown t variant '" + s + "'");
}

CiMethod parse_ci_method(const std::string& s) {
  if (s == "t-residual") return CiMethod::t_residual;
  if (s == "test-inversion") return CiMethod::test_inversion;
  throw std::invalid_argument("unknown ci method '" + s + "'");
}

PermutationMode make_mode(long long n_resamples, std::uint64_t seed) {
  return n_resamples > 0 ? PermutationMode::Sampled(n_resamples, seed)
                         : PermutationMode::Exact();
}

TrialDataset make_dataset(const Eigen::MatrixXd& covariates,
                          const Eigen::VectorXd& outcomes,
                          const std::vector<int>& assignment) {
  TrialDataset data;
  data.covariates = covariates;
  data.outcomes = outcomes;
  data.assignment = assignment;
  data.validate();
  return data;
}

AnalysisOptions make_options(const std::string& test, const std::string& sided,
                             double tau0, const std::string& convention,
                             const std::string& t_variant,
                             long long n_resamples, std::uint64_t seed,
                             std::optional<double> ci_level,
                             const std::string& ci_method) {
  AnalysisOptions options;
  options.test = parse_test(test);
  options.sided = sided_from_string(sided);
  options.t_variant = parse_variant(t_variant);
  options.convention = parse_convention(convention);
  options.tau0 = tau0;
  options.permutation = make_mode(n_resamples, seed);
  options.ci_level = ci_level;
  options.ci_method = parse_ci_method(ci_method);
  return options;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Covariate-adjusted randomization inference for two-arm trials";
  m.attr("__version__") = RFINFER_VERSION;

  py::class_<ForestConfig>(m, "ForestConfig")
      .def(py::init<>())
      .def_readwrite("n_trees", &ForestConfig::n_trees)
      .def_readwrite("mtry", &ForestConfig::mtry)
      .def_readwrite("min_leaf", &ForestConfig::min_leaf)
      .def_readwrite("max_depth", &ForestConfig::max_depth)
      .def_readwrite("seed", &ForestConfig::seed)
      .def_readwrite("bootstrap", &ForestConfig::bootstrap)
      .def_readwrite("n_threads", &ForestConfig::n_threads);

  py::class_<TestResult>(m, "TestResult")
      .def_readonly("statistic", &TestResult::statistic)
      .def_readonly("p_value", &TestResult::p_value)
      .def_readonly("exact", &TestResult::exact)
      .def("__repr__", [](const TestResult& r) {
        return "TestResult(statistic=" + std::to_string(r.statistic) +
               ", p_value=" + std::to_string(r.p_value) + ")";
      });

  py::class_<ConfidenceInterval>(m, "ConfidenceInterval")
      .def_readonly("lower", &ConfidenceInterval::lower)
      .def_readonly("upper", &ConfidenceInterval::upper)
      .def_readonly("level", &ConfidenceInterval::level);

  py::class_<EffectEstimate>(m, "EffectEstimate")
      .def_readonly("tau_hat", &EffectEstimate::tau_hat)
      .def_readonly("variance", &EffectEstimate::variance)
      .def_readonly("std_error", &EffectEstimate::std_error)
      .def_readonly("ci", &EffectEstimate::ci)
      .def("__repr__", [](const EffectEstimate& e) {
        return "EffectEstimate(tau_hat=" + std::to_string(e.tau_hat) +
               ", std_error=" + std::to_string(e.std_error) + ")";
      });

  py::class_<ForestDiagnostics>(m, "ForestDiagnostics")
      .def_readonly("importance", &ForestDiagnostics::importance)
      .def_readonly("never_oob", &ForestDiagnostics::never_oob)
      .def_readonly("oob_r_squared", &ForestDiagnostics::oob_r_squared);

  py::class_<AdjustedAnalysis>(m, "AdjustedAnalysis")
      .def_readonly("test", &AdjustedAnalysis::test)
      .def_readonly("estimate", &AdjustedAnalysis::estimate)
      .def_readonly("forest", &AdjustedAnalysis::forest)
      .def_property_readonly("residuals", [](const AdjustedAnalysis& a) {
        return a.residuals.values;
      });

  py::class_<CrossEstimate>(m, "CrossEstimate")
      .def_readonly("tau_hat", &CrossEstimate::tau_hat)
      .def_readonly("variance", &CrossEstimate::variance)
      .def_readonly("std_error", &CrossEstimate::std_error)
      .def_readonly("test", &CrossEstimate::test);

  m.def(
      "permutation_test",
      [](const Eigen::VectorXd& values, const std::vector<int>& assignment,
         const std::string& sided, long long n_resamples, std::uint64_t seed) {
        return permutation_test(values, assignment, sided_from_string(sided),
                                make_mode(n_resamples, seed));
      },
      py::arg("values"), py::arg("assignment"), py::arg("sided") = "two-sided",
      py::arg("n_resamples") = 0, py::arg("seed") = 0,
      "Randomization test of the mean difference. n_resamples=0 enumerates "
      "every assignment; otherwise that many are sampled.");

  m.def(
      "wilcoxon_test",
      [](const Eigen::VectorXd& values, const std::vector<int>& assignment,
         const std::string& sided) {
        return wilcoxon_rank_sum(values, assignment, sided_from_string(sided));
      },
      py::arg("values"), py::arg("assignment"), py::arg("sided") = "two-sided",
      "Rank-sum test; exact when ties and size permit, normal "
      "approximation with continuity correction otherwise.");

  m.def(
      "t_test",
      [](const Eigen::VectorXd& values, const std::vector<int>& assignment,
         const std::string& sided, const std::string& variant) {
        return t_test(values, assignment, sided_from_string(sided),
                      parse_variant(variant));
      },
      py::arg("values"), py::arg("assignment"), py::arg("sided") = "two-sided",
      py::arg("variant") = "welch");

  m.def(
      "rf_oob_residuals",
      [](const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
         const ForestConfig& config) {
        ForestDiagnostics diagnostics;
        ResidualVector residuals = rf_oob_residuals(X, y, config, &diagnostics);
        return std::make_pair(residuals.values, diagnostics);
      },
      py::arg("X"), py::arg("y"), py::arg("config") = ForestConfig{},
      "Out-of-bag residuals of a random forest fit without the assignment. "
      "Returns (residuals, diagnostics).");

  m.def(
      "estimate_effect",
      [](const Eigen::VectorXd& residuals, const std::vector<int>& assignment,
         const std::string& convention) {
        return estimate_effect(residuals, assignment,
                               parse_convention(convention));
      },
      py::arg("residuals"), py::arg("assignment"),
      py::arg("convention") = "finite-population");

  m.def(
      "analyze",
      [](const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
         const std::vector<int>& assignment, const std::string& adjustment,
         const std::string& test, const std::string& sided, double tau0,
         const std::string& convention, const std::string& t_variant,
         long long n_resamples, std::uint64_t seed,
         std::optional<double> ci_level, const std::string& ci_method,
         const ForestConfig& forest) {
        const TrialDataset data = make_dataset(X, y, assignment);
        const AnalysisOptions options =
            make_options(test, sided, tau0, convention, t_variant, n_resamples,
                         seed, ci_level, ci_method);
        if (adjustment == "rf") return rf_adjusted_test(data, forest, options);
        if (adjustment == "ols") return ols_adjusted_test(data, options);
        if (adjustment == "none") return unadjusted_test(data, options);
        throw std::invalid_argument("unknown adjustment '" + adjustment +
                                    "' (expected rf, ols or none)");
      },
      py::arg("X"), py::arg("y"), py::arg("assignment"),
      py::arg("adjustment") = "rf", py::arg("test") = "wilcoxon",
      py::arg("sided") = "two-sided", py::arg("tau0") = 0.0,
      py::arg("convention") = "finite-population",
      py::arg("t_variant") = "welch", py::arg("n_resamples") = 0,
      py::arg("seed") = 0, py::arg("ci_level") = py::none(),
      py::arg("ci_method") = "t-residual",
      py::arg("forest") = ForestConfig{},
      "Full pipeline: remove tau0 * z from the outcome, residualize on the "
      "covariates, test the residual difference and estimate the effect.");

  m.def(
      "cross_estimation",
      [](const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
         const std::vector<int>& assignment, const std::string& sided,
         int folds, std::uint64_t fold_seed, const ForestConfig& forest) {
        const TrialDataset data = make_dataset(X, y, assignment);
        return cross_estimation(data, forest, folds, sided_from_string(sided),
                                fold_seed);
      },
      py::arg("X"), py::arg("y"), py::arg("assignment"),
      py::arg("sided") = "two-sided", py::arg("folds") = 2,
      py::arg("fold_seed") = 0, py::arg("forest") = ForestConfig{},
      "Imputation estimator with per-arm cross-fitted outcome models.");

  m.def("sample_size_reduction", &sample_size_reduction, py::arg("n"),
        py::arg("gamma"),
        "Subjects saved when adjustment explains a fraction gamma of the "
        "outcome variance.");
}
