#include "enumeration.hpp"
#include "plm.hpp"

#include "rorrlab/error.hpp"
#include "rorrlab/rng.hpp"
#include "rorrlab/rorr.hpp"
#include "rorrlab/simlab.hpp"

#include <doctest.h>

#include <cmath>

using namespace rorrlab;
using rorrlab::testing::enumerate_binary;
using rorrlab::testing::random_strata_model;

namespace {

// With-intercept OLS slope of y on t via the 2x2 normal equations.
double intercept_ols_slope(const Eigen::VectorXd& y, const Eigen::VectorXd& t) {
  Eigen::MatrixXd x(t.size(), 2);
  x.col(0).setOnes();
  x.col(1) = t;
  return (x.transpose() * x).ldlt().solve(x.transpose() * y)(1);
}

LearnerSpec stratum_spec() {
  LearnerSpec s;
  s.kind = LearnerKind::stratum_mean;
  return s;
}

}  // namespace

TEST_CASE("residualize centers the difference") {
  const Eigen::VectorXd r = residualize(Eigen::Vector2d(3, 4), Eigen::Vector2d(1, 1));
  CHECK(r(0) == doctest::Approx(-0.5));
  CHECK(r(1) == doctest::Approx(0.5));
  const Eigen::Vector3d v(1, 2, 3);
  CHECK(residualize(v, v).isZero());
  const Eigen::VectorXd two = Eigen::Vector2d(1, 2), three = Eigen::Vector3d(1, 2, 3);
  CHECK_THROWS_AS(residualize(two, three), ValidationError);
}

TEST_CASE("ols slope on small examples") {
  const auto a = ols_slope(Eigen::Vector3d(-1, 0, 1), Eigen::Vector3d(-2, 0, 2));
  CHECK(a.theta_hat == doctest::Approx(0.5));
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(7, -3, 3);
  const auto b = ols_slope(2.0 * t, t);
  CHECK(b.theta_hat == doctest::Approx(2.0));
  CHECK(b.se == doctest::Approx(0.0));
  CHECK(b.ci95.first == doctest::Approx(b.theta_hat - 1.96 * b.se));
}

TEST_CASE("ols slope matches normal equations and HC1 oracle") {
  const Index n = 20;
  Eigen::VectorXd y(n), t(n);
  CounterRng rng(77, 0);
  for (Index i = 0; i < n; ++i) {
    t(i) = rng.normal();
    y(i) = 0.3 + 1.7 * t(i) + rng.normal();
  }
  const auto est = ols_slope(y, t);
  CHECK(std::abs(est.theta_hat - intercept_ols_slope(y, t)) < 1e-12);
  // HC1 from scratch on the centered data.
  const Eigen::VectorXd yc = y.array() - y.mean();
  const Eigen::VectorXd tc = t.array() - t.mean();
  const double b = yc.dot(tc) / tc.squaredNorm();
  const Eigen::VectorXd e = yc - b * tc;
  double meat = 0.0;
  for (Index i = 0; i < n; ++i) meat += tc(i) * tc(i) * e(i) * e(i);
  const double se = std::sqrt(static_cast<double>(n) / (n - 1) * meat) / tc.squaredNorm();
  CHECK(est.se == doctest::Approx(se).epsilon(1e-12));
  CHECK(est.ci95.second - est.ci95.first == doctest::Approx(2 * 1.96 * se));
  CHECK(est.n == n);
}

TEST_CASE("Frisch-Waugh consistency on uncentered residuals") {
  const Index n = 500;
  Eigen::VectorXd y(n), t(n);
  CounterRng rng(78, 0);
  for (Index i = 0; i < n; ++i) {
    t(i) = 5.0 + rng.normal();
    y(i) = -4.0 + 0.7 * t(i) + rng.normal();
  }
  CHECK(std::abs(ols_slope(y, t).theta_hat - intercept_ols_slope(y, t)) < 1e-10);
}

TEST_CASE("all-zero treatment residuals are degenerate") {
  CHECK_THROWS_AS(ols_slope(Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(4, 4, 4)), NumericError);
}

TEST_CASE("binary closed form on the documented example") {
  DiscreteStrataModel m;
  m.pi = Eigen::Vector2d(0.5, 0.5);
  m.h = Eigen::Vector2d(0.1, 0.5);
  m.theta = Eigen::Vector2d(1, 2);
  CHECK(binary_rorr_plim(m) == doctest::Approx(0.295 / 0.17).epsilon(1e-14));
  CHECK(binary_rorr_plim(m) == doctest::Approx(1.73529).epsilon(1e-5));
  CHECK(binary_bias(m) == doctest::Approx(0.295 / 0.17 - 1.5).epsilon(1e-13));
  const auto e = enumerate_binary(m);
  CHECK(std::abs(binary_rorr_plim(m) - e.plim) < 1e-12);
}

TEST_CASE("binary closed form special cases") {
  DiscreteStrataModel m;
  m.pi = Eigen::Vector3d(0.2, 0.3, 0.5);
  m.h = Eigen::Vector3d(0.1, 0.6, 0.9);
  m.theta = Eigen::Vector3d::Constant(1.25);
  CHECK(binary_rorr_plim(m) == doctest::Approx(1.25));
  CHECK(std::abs(binary_bias(m)) < 1e-15);
  m.theta = Eigen::Vector3d(-1, 0.5, 4);
  m.h.setConstant(0.3);
  CHECK(binary_rorr_plim(m) == doctest::Approx(m.pi.dot(m.theta)));
  CHECK(std::abs(binary_bias(m)) < 1e-15);
  m.h = Eigen::Vector3d(0, 1, 1);
  CHECK_THROWS_AS(binary_rorr_plim(m), NumericError);
}

TEST_CASE("binary closed form matches enumeration on random models") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto m = random_strata_model(s);
    const auto e = enumerate_binary(m);
    CHECK(std::abs(binary_rorr_plim(m) - e.plim) < 1e-12);
    CHECK(std::abs(binary_bias(m) - (e.plim - e.mean_theta)) < 1e-12);
    CHECK(std::abs(binary_bias(m) - weight_effect_covariance(m)) < 1e-12);
    CHECK(binary_rorr_plim(m) >= m.theta.minCoeff() - 1e-12);
    CHECK(binary_rorr_plim(m) <= m.theta.maxCoeff() + 1e-12);
    const Eigen::VectorXd w = variance_weights(m);
    CHECK(m.pi.dot(w) == doctest::Approx(1.0).epsilon(1e-12));
    // Relabeling strata leaves the limit unchanged.
    DiscreteStrataModel r = m;
    r.pi.reverseInPlace();
    r.h.reverseInPlace();
    r.theta.reverseInPlace();
    CHECK(std::abs(binary_rorr_plim(r) - binary_rorr_plim(m)) < 1e-12);
  }
}

TEST_CASE("randomized treatment recovers the mean effect") {
  DiscreteStrataModel m;
  m.pi = Eigen::Vector3d(0.3, 0.3, 0.4);
  m.h = Eigen::Vector3d::Constant(0.4);
  m.theta = Eigen::Vector3d(0.5, 1.0, 3.0);
  const auto s = sample_binary_strata(m, 30000, 5, Eigen::Vector3d(1.0, -1.0, 2.0), 1.0);
  const auto est = rorr_pipeline(s.table, make_folds(s.table.n(), 5, 5), stratum_spec());
  CHECK(std::abs(est.theta_hat - m.pi.dot(m.theta)) < 3.0 * est.se);
}

TEST_CASE("confounded binary treatment converges to the closed form") {
  DiscreteStrataModel m;
  m.pi = Eigen::Vector3d(0.3, 0.3, 0.4);
  m.h = Eigen::Vector3d(0.1, 0.5, 0.85);
  m.theta = Eigen::Vector3d(0.5, 1.0, 3.0);
  const auto s = sample_binary_strata(m, 30000, 6, Eigen::Vector3d(1.0, -1.0, 2.0), 1.0);
  const auto est = rorr_pipeline(s.table, make_folds(s.table.n(), 5, 6), stratum_spec());
  CHECK(std::abs(est.theta_hat - binary_rorr_plim(m)) < 3.0 * est.se);
  CHECK(std::abs(est.theta_hat - m.pi.dot(m.theta)) > 3.0 * est.se);
}

TEST_CASE("affine dose with confounded Poisson treatment and boosted nuisances") {
  rorrlab::testing::PlmOptions o;
  o.n = 20000;
  o.seed = 3;
  const auto tab = rorrlab::testing::confounded_plm(o);
  LearnerSpec spec;
  spec.rounds = 300;
  const auto est = rorr_pipeline(tab, make_folds(tab.n(), 5, 3), spec);
  CHECK(std::abs(est.theta_hat - 1.5) < 3.0 * est.se);
}
