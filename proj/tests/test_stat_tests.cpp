#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfinfer/rng.hpp"
#include "rfinfer/stat_tests.hpp"

using namespace rfinfer;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

// O(n^2) midranks, independent of the implementation under test.
std::vector<double> oracle_midranks(const Eigen::VectorXd& v) {
  const auto n = v.size();
  std::vector<double> r(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    int less = 0, equal = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (v[j] < v[i]) ++less;
      if (v[j] == v[i]) ++equal;
    }
    r[static_cast<std::size_t>(i)] = less + (equal + 1) / 2.0;
  }
  return r;
}

struct TailCounts {
  long long total = 0;
  long long le = 0;
  long long ge = 0;
};

// Enumerates every size-n1 treated subset by bitmask and counts rank sums
// in each tail relative to the observed one.
TailCounts enumerate_rank_sums(const std::vector<double>& ranks, int n1,
                               double observed) {
  const int n = static_cast<int>(ranks.size());
  TailCounts c;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != n1) continue;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) sum += ranks[static_cast<std::size_t>(i)];
    }
    ++c.total;
    if (sum <= observed + 1e-9) ++c.le;
    if (sum >= observed - 1e-9) ++c.ge;
  }
  return c;
}

double oracle_wilcoxon_p(const TailCounts& c, Sided sided) {
  const double p_le = static_cast<double>(c.le) / static_cast<double>(c.total);
  const double p_ge = static_cast<double>(c.ge) / static_cast<double>(c.total);
  switch (sided) {
    case Sided::greater: return p_ge;
    case Sided::less: return p_le;
    case Sided::two_sided:
      return std::min(1.0, 2.0 * std::min(p_le, p_ge));
  }
  return 1.0;
}

// Mean-difference permutation p by bitmask enumeration.
double oracle_permutation_p(const Eigen::VectorXd& values,
                            const std::vector<int>& assignment, Sided sided) {
  const int n = static_cast<int>(values.size());
  int n1 = 0;
  double treated_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (assignment[static_cast<std::size_t>(i)] == 1) {
      ++n1;
      treated_sum += values[i];
    }
  }
  const int n0 = n - n1;
  const double observed = treated_sum / n1 - (values.sum() - treated_sum) / n0;
  const double tol = 1e-12 * (1.0 + std::fabs(observed));
  long long total = 0, extreme = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != n1) continue;
    double sum1 = 0.0;
    for (int i = 0; i < n; ++i) {
      if (mask & (1u << i)) sum1 += values[i];
    }
    const double diff = sum1 / n1 - (values.sum() - sum1) / n0;
    ++total;
    bool hit = false;
    switch (sided) {
      case Sided::greater: hit = diff >= observed - tol; break;
      case Sided::less: hit = diff <= observed + tol; break;
      case Sided::two_sided:
        hit = std::fabs(diff) >= std::fabs(observed) - tol;
        break;
    }
    if (hit) ++extreme;
  }
  return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("choose_capped computes small binomials and saturates at the cap") {
  CHECK(choose_capped(10, 5, 1000000) == 252);
  CHECK(choose_capped(600, 2, 200000) == 179700);
  CHECK(choose_capped(4, 0, 100) == 1);
  CHECK(choose_capped(4, 4, 100) == 1);
  CHECK(choose_capped(4, 5, 100) == 0);
  CHECK(choose_capped(4, -1, 100) == 0);
  // C(50, 25) is ~1.26e14; must clamp rather than overflow
  CHECK(choose_capped(50, 25, 200000) == 200001);
  CHECK(choose_capped(24, 12, 200000) == 200001);
  CHECK(choose_capped(20, 10, 200000) == 184756);
}

TEST_CASE("enum names round-trip") {
  for (Sided s : {Sided::two_sided, Sided::greater, Sided::less}) {
    CHECK(sided_from_string(to_string(s)) == s);
  }
  CHECK_THROWS_AS(sided_from_string("sideways"), std::invalid_argument);
  CHECK(std::string(to_string(TestMethod::wilcoxon)) == "wilcoxon");
  CHECK(std::string(to_string(TestMethod::welch_t)) == "welch-t");
}

TEST_CASE("pooled t statistic matches a hand calculation") {
  // treated (5,6,7,8) vs control (1,2,3,4): diff 4, ss 5 per arm, df 6,
  // sp^2 = 10/6, se = sqrt(sp^2 / 2), t = 4 / sqrt(5/6)
  const Eigen::VectorXd y = vec({5, 1, 6, 2, 7, 3, 8, 4});
  const std::vector<int> z = {1, 0, 1, 0, 1, 0, 1, 0};
  const TestResult r = t_test(y, z, Sided::two_sided, TTestVariant::pooled);
  CHECK(r.method == TestMethod::t);
  CHECK(r.statistic == doctest::Approx(4.0 / std::sqrt(5.0 / 6.0)).epsilon(1e-12));
  CHECK(!r.degenerate);
  CHECK(r.p_value > 0.0);
  CHECK(r.p_value < 0.01);

  const TestResult g = t_test(y, z, Sided::greater, TTestVariant::pooled);
  const TestResult l = t_test(y, z, Sided::less, TTestVariant::pooled);
  CHECK(g.p_value + l.p_value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(2.0 * g.p_value).epsilon(1e-12));
}

TEST_CASE("welch and pooled t agree for balanced arms with equal spread") {
  const Eigen::VectorXd y = vec({1, 5, 2, 6, 3, 7, 4, 8});
  const std::vector<int> z = {1, 0, 1, 0, 1, 0, 1, 0};
  const TestResult pooled = t_test(y, z, Sided::two_sided, TTestVariant::pooled);
  const TestResult welch = t_test(y, z, Sided::two_sided, TTestVariant::welch);
  CHECK(welch.method == TestMethod::welch_t);
  CHECK(welch.statistic == doctest::Approx(pooled.statistic).epsilon(1e-12));
  CHECK(welch.p_value == doctest::Approx(pooled.p_value).epsilon(1e-12));
}

TEST_CASE("t-test on mirror-image arms gives statistic 0 and p 1") {
  const Eigen::VectorXd y = vec({1, 1, 2, 2, 3, 3});
  const std::vector<int> z = {1, 0, 1, 0, 1, 0};
  for (TTestVariant variant : {TTestVariant::pooled, TTestVariant::welch}) {
    const TestResult r = t_test(y, z, Sided::two_sided, variant);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("t-test handles zero-variance arms explicitly") {
  SUBCASE("identical constants in both arms") {
    const TestResult r = t_test(vec({2, 2, 2, 2}), {1, 0, 1, 0},
                                Sided::two_sided, TTestVariant::pooled);
    CHECK(r.degenerate);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == 1.0);
  }
  SUBCASE("separated constants") {
    const TestResult r = t_test(vec({3, 1, 3, 1}), {1, 0, 1, 0},
                                Sided::two_sided, TTestVariant::pooled);
    CHECK(r.degenerate);
    CHECK(std::isinf(r.statistic));
    CHECK(r.statistic > 0);
    CHECK(r.p_value == 0.0);
    const TestResult less = t_test(vec({3, 1, 3, 1}), {1, 0, 1, 0},
                                   Sided::less, TTestVariant::pooled);
    CHECK(less.p_value == 1.0);
  }
}

TEST_CASE("t-test rejects arms with fewer than two values") {
  CHECK_THROWS_AS(t_test(vec({1, 2, 3, 4}), {1, 0, 0, 0}, Sided::two_sided),
                  std::invalid_argument);
}

TEST_CASE("t-test null rejection rate is calibrated") {
  // Two arms of 20 standard normals; two-sided rejection at 0.05 should be
  // 0.05 within Monte Carlo error (SE ~ 0.0011 at 40000 reps).
  Rng rng(20250801);
  const int reps = 40000;
  int rejections = 0;
  Eigen::VectorXd y(40);
  std::vector<int> z(40);
  for (int i = 0; i < 40; ++i) z[static_cast<std::size_t>(i)] = i < 20 ? 1 : 0;
  for (int r = 0; r < reps; ++r) {
    for (int i = 0; i < 40; ++i) y[i] = rng.normal();
    if (t_test(y, z, Sided::two_sided, TTestVariant::pooled).p_value <= 0.05) {
      ++rejections;
    }
  }
  const double rate = static_cast<double>(rejections) / reps;
  CHECK(rate > 0.044);
  CHECK(rate < 0.056);
}

TEST_CASE("wilcoxon exact tail matches a tiny hand enumeration") {
  // treated ranks {1,2} out of {1..4}: P(W <= 3) = 1/6
  const Eigen::VectorXd y = vec({1, 2, 3, 4});
  const std::vector<int> z = {1, 1, 0, 0};
  const TestResult r = wilcoxon_rank_sum(y, z, Sided::less);
  CHECK(r.exact);
  CHECK(r.statistic == 3.0);
  CHECK(r.p_value == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("wilcoxon exact null matches full enumeration at n = 8") {
  Rng rng(991);
  Eigen::VectorXd y(8);
  for (int i = 0; i < 8; ++i) y[i] = rng.normal();
  const std::vector<int> z = {1, 0, 0, 1, 0, 1, 0, 0};
  const std::vector<double> ranks = oracle_midranks(y);
  double observed = 0.0;
  for (int i = 0; i < 8; ++i) {
    if (z[static_cast<std::size_t>(i)] == 1) {
      observed += ranks[static_cast<std::size_t>(i)];
    }
  }
  const TailCounts counts = enumerate_rank_sums(ranks, 3, observed);
  CHECK(counts.total == 56);
  for (Sided sided : {Sided::greater, Sided::less, Sided::two_sided}) {
    const TestResult r = wilcoxon_rank_sum(y, z, sided);
    CHECK(r.exact);
    CHECK(r.statistic == doctest::Approx(observed).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(oracle_wilcoxon_p(counts, sided))
                           .epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon normal approximation tracks enumeration under ties") {
  // Ties force the approximate path; compare against the exact reference
  // distribution of midrank sums over all C(12,6) assignments.
  const Eigen::VectorXd y =
      vec({0.2, 0.2, 1.4, -0.7, 1.4, 2.5, -0.7, 0.9, 3.1, 0.2, -1.8, 0.9});
  const std::vector<int> z = {1, 0, 1, 0, 0, 1, 1, 0, 1, 0, 1, 0};
  const std::vector<double> ranks = oracle_midranks(y);
  double observed = 0.0;
  for (int i = 0; i < 12; ++i) {
    if (z[static_cast<std::size_t>(i)] == 1) {
      observed += ranks[static_cast<std::size_t>(i)];
    }
  }
  const TailCounts counts = enumerate_rank_sums(ranks, 6, observed);
  CHECK(counts.total == 924);
  for (Sided sided : {Sided::greater, Sided::less, Sided::two_sided}) {
    const TestResult r = wilcoxon_rank_sum(y, z, sided);
    CHECK(!r.exact);
    const double exact_p = oracle_wilcoxon_p(counts, sided);
    CHECK(std::fabs(r.p_value - exact_p) < 0.03);
  }
}

TEST_CASE("wilcoxon statistic is the treated midrank sum") {
  const Eigen::VectorXd y = vec({1, 1, 2, 3});
  const std::vector<int> z = {1, 0, 1, 0};
  const TestResult r = wilcoxon_rank_sum(y, z, Sided::two_sided);
  // midranks 1.5, 1.5, 3, 4
  CHECK(r.statistic == 4.5);
  CHECK(!r.exact);
}

TEST_CASE("wilcoxon is invariant under strictly increasing transforms") {
  Rng rng(417);
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) y[i] = rng.normal();
  std::vector<int> z(10, 0);
  for (int i = 0; i < 5; ++i) z[static_cast<std::size_t>(i)] = 1;
  Eigen::VectorXd cubed = y;
  for (int i = 0; i < 10; ++i) cubed[i] = y[i] * y[i] * y[i];
  for (Sided sided : {Sided::greater, Sided::less, Sided::two_sided}) {
    const TestResult a = wilcoxon_rank_sum(y, z, sided);
    const TestResult b = wilcoxon_rank_sum(cubed, z, sided);
    CHECK(a.statistic == b.statistic);
    CHECK(a.p_value == b.p_value);
  }
}

TEST_CASE("wilcoxon mode selection follows the enumeration cap") {
  Rng rng(55);
  SUBCASE("tie-free n = 18 enumerates") {
    Eigen::VectorXd y(18);
    for (int i = 0; i < 18; ++i) y[i] = rng.normal();
    std::vector<int> z(18, 0);
    for (int i = 0; i < 9; ++i) z[static_cast<std::size_t>(i)] = 1;
    CHECK(wilcoxon_rank_sum(y, z, Sided::two_sided).exact);
  }
  SUBCASE("tie-free n = 24 exceeds the cap and approximates") {
    Eigen::VectorXd y(24);
    for (int i = 0; i < 24; ++i) y[i] = rng.normal();
    std::vector<int> z(24, 0);
    for (int i = 0; i < 12; ++i) z[static_cast<std::size_t>(i)] = 1;
    CHECK(!wilcoxon_rank_sum(y, z, Sided::two_sided).exact);
  }
}

TEST_CASE("wilcoxon on constant data degenerates to p = 1") {
  const TestResult r =
      wilcoxon_rank_sum(vec({5, 5, 5, 5}), {1, 0, 1, 0}, Sided::two_sided);
  CHECK(r.degenerate);
  CHECK(r.p_value == 1.0);
}

TEST_CASE("permutation test matches a tiny hand enumeration") {
  const Eigen::VectorXd y = vec({1, 2, 3, 4});
  const std::vector<int> z = {0, 0, 1, 1};
  const TestResult r =
      permutation_test(y, z, Sided::greater, PermutationMode::Exact());
  CHECK(r.exact);
  CHECK(r.n_resamples == 6);
  CHECK(r.statistic == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
}

TEST_CASE("exact permutation matches bitmask enumeration at n = 9") {
  Rng rng(2718);
  Eigen::VectorXd y(9);
  for (int i = 0; i < 9; ++i) y[i] = rng.normal() + 0.3 * i;
  const std::vector<int> z = {0, 1, 0, 0, 1, 1, 0, 1, 0};
  for (Sided sided : {Sided::greater, Sided::less, Sided::two_sided}) {
    const TestResult r =
        permutation_test(y, z, sided, PermutationMode::Exact());
    CHECK(r.exact);
    CHECK(r.n_resamples == 126);
    CHECK(r.p_value ==
          doctest::Approx(oracle_permutation_p(y, z, sided)).epsilon(1e-12));
  }
}

TEST_CASE("permutation p is invariant under row reordering") {
  Rng rng(31);
  Eigen::VectorXd y(10);
  std::vector<int> z(10, 0);
  for (int i = 0; i < 10; ++i) {
    y[i] = rng.normal();
    z[static_cast<std::size_t>(i)] = i % 2;
  }
  Eigen::VectorXd y2(10);
  std::vector<int> z2(10);
  // reverse both together
  for (int i = 0; i < 10; ++i) {
    y2[i] = y[9 - i];
    z2[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(9 - i)];
  }
  for (Sided sided : {Sided::greater, Sided::less, Sided::two_sided}) {
    const TestResult a = permutation_test(y, z, sided, PermutationMode::Exact());
    const TestResult b =
        permutation_test(y2, z2, sided, PermutationMode::Exact());
    CHECK(a.p_value == b.p_value);
  }
}

TEST_CASE("exact permutation on ranks reproduces exact wilcoxon tails") {
  Rng rng(713);
  Eigen::VectorXd y(8);
  for (int i = 0; i < 8; ++i) y[i] = rng.normal();
  const std::vector<int> z = {1, 1, 0, 0, 1, 0, 0, 0};
  const std::vector<double> mid = oracle_midranks(y);
  Eigen::VectorXd ranks(8);
  for (int i = 0; i < 8; ++i) ranks[i] = mid[static_cast<std::size_t>(i)];
  for (Sided sided : {Sided::greater, Sided::less}) {
    const TestResult perm =
        permutation_test(ranks, z, sided, PermutationMode::Exact());
    const TestResult wil = wilcoxon_rank_sum(y, z, sided);
    CHECK(wil.exact);
    CHECK(perm.p_value == doctest::Approx(wil.p_value).epsilon(1e-12));
  }
}

TEST_CASE("sampled permutation approximates the exact p-value") {
  Rng rng(8675309);
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) y[i] = rng.normal() + (i < 5 ? 0.8 : 0.0);
  std::vector<int> z(10, 0);
  for (int i = 0; i < 5; ++i) z[static_cast<std::size_t>(i)] = 1;
  const TestResult exact =
      permutation_test(y, z, Sided::greater, PermutationMode::Exact());
  const TestResult sampled = permutation_test(
      y, z, Sided::greater, PermutationMode::Sampled(100000, 42));
  CHECK(!sampled.exact);
  CHECK(sampled.n_resamples == 100000);
  CHECK(std::fabs(sampled.p_value - exact.p_value) < 0.01);
  CHECK(sampled.p_value > 0.0);

  const TestResult again = permutation_test(
      y, z, Sided::greater, PermutationMode::Sampled(100000, 42));
  CHECK(again.p_value == sampled.p_value);
}

TEST_CASE("constant data yields a degenerate permutation p of 1") {
  const TestResult r = permutation_test(vec({4, 4, 4, 4}), {1, 0, 1, 0},
                                        Sided::two_sided,
                                        PermutationMode::Exact());
  CHECK(r.degenerate);
  CHECK(r.p_value == 1.0);
}

TEST_CASE("exact permutation refuses designs beyond the enumeration cap") {
  Eigen::VectorXd y(40);
  std::vector<int> z(40, 0);
  for (int i = 0; i < 40; ++i) {
    y[i] = i;
    z[static_cast<std::size_t>(i)] = i < 20 ? 1 : 0;
  }
  try {
    permutation_test(y, z, Sided::two_sided, PermutationMode::Exact());
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("sampled") != std::string::npos);
  }
  CHECK_THROWS_AS(
      permutation_test(y, z, Sided::two_sided, PermutationMode::Sampled(0, 1)),
      std::invalid_argument);
}

TEST_CASE("ols residuals vanish on exactly linear data") {
  Eigen::MatrixXd X(6, 1);
  X << 0, 1, 2, 3, 4, 5;
  Eigen::VectorXd y(6);
  for (int i = 0; i < 6; ++i) y[i] = 2.0 + 3.0 * X(i, 0);
  const ResidualVector r = ols_residuals(X, y);
  CHECK(r.source == ResidualSource::ols);
  CHECK(!r.degenerate);
  CHECK(r.values.lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("ols residuals match a hand-solved orthogonal design") {
  // x is orthogonal to the intercept and to y's deviations, so the fit is
  // just the mean and residuals are centered y.
  Eigen::MatrixXd X(4, 1);
  X << 1, -1, 1, -1;
  const Eigen::VectorXd y = vec({2, 2, 4, 4});
  const ResidualVector r = ols_residuals(X, y);
  CHECK(!r.degenerate);
  CHECK(r.values[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.values[1] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(r.values[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.values[3] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("saturated and collinear designs are flagged degenerate") {
  SUBCASE("p + 1 >= n") {
    Eigen::MatrixXd X(4, 3);
    X << 1, 2, 3, 4, 5, 6, 7, 8, 9.5, 10, 12, 11;
    const Eigen::VectorXd y = vec({1, 2, 3, 4});
    const ResidualVector r = ols_residuals(X, y);
    CHECK(r.degenerate);
    CHECK(r.values.lpNorm<Eigen::Infinity>() < 1e-8);
  }
  SUBCASE("duplicated column") {
    Rng rng(12);
    Eigen::MatrixXd X1(8, 1);
    Eigen::VectorXd y(8);
    for (int i = 0; i < 8; ++i) {
      X1(i, 0) = rng.normal();
      y[i] = 1.5 * X1(i, 0) + rng.normal();
    }
    Eigen::MatrixXd X2(8, 2);
    X2.col(0) = X1.col(0);
    X2.col(1) = X1.col(0);
    const ResidualVector base = ols_residuals(X1, y);
    const ResidualVector dup = ols_residuals(X2, y);
    CHECK(!base.degenerate);
    CHECK(dup.degenerate);
    // same column space, so identical projections
    CHECK((dup.values - base.values).lpNorm<Eigen::Infinity>() < 1e-9);
  }
}

TEST_CASE("ols residuals validate shapes") {
  Eigen::MatrixXd X(4, 1);
  X << 1, 2, 3, 4;
  CHECK_THROWS_AS(ols_residuals(X, vec({1, 2, 3})), std::invalid_argument);
}
