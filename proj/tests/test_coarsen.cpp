#include "rorrlab/coarsen.hpp"
#include "rorrlab/error.hpp"
#include "rorrlab/rng.hpp"
#include "rorrlab/rorr.hpp"
#include "rorrlab/simlab.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace rorrlab;

namespace {

// Two-bin partition [lo, cut), [cut, hi] with masses from t.
BinPartition cut_partition(const Eigen::VectorXd& t, double cut) {
  BinPartition p;
  p.kind = BinKind::quantile;
  p.requested_bins = 2;
  p.edges = Eigen::Vector3d(t.minCoeff(), cut, t.maxCoeff());
  p.midpoints = Eigen::Vector2d(0.5 * (p.edges(0) + cut), 0.5 * (cut + p.edges(2)));
  p.lengths = Eigen::Vector2d(cut - p.edges(0), p.edges(2) - cut);
  const double upper = (t.array() >= cut).cast<double>().mean();
  p.masses = Eigen::Vector2d(1.0 - upper, upper);
  p.weights = Eigen::Vector2d(1.0, 0.0);
  return p;
}

double pmf(int t, double lambda) { return std::exp(t * std::log(lambda) - lambda - std::lgamma(t + 1.0)); }

ObservationTable table_from_t(const Eigen::VectorXd& t) {
  ObservationTable tab;
  tab.t = t;
  tab.y = Eigen::VectorXd::Zero(t.size());
  tab.x_num.resize(t.size(), 0);
  tab.x_cat.resize(t.size(), 0);
  return tab;
}

}  // namespace

TEST_CASE("equal-width halves") {
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(11, 0, 10);
  const auto p = make_partition(t, BinKind::equal_width, 2);
  CHECK(p.edges.size() == 3);
  CHECK(p.edges(0) == 0.0);
  CHECK(p.edges(1) == 5.0);
  CHECK(p.edges(2) == 10.0);
  CHECK(p.bin_of(5.0) == 1);
  CHECK(p.bin_of(4.999) == 0);
  CHECK(p.bin_of(10.0) == 1);
  CHECK_THROWS_AS(p.bin_of(10.5), DataError);
}

TEST_CASE("zero-plus-quantiles puts zeros alone and splits positives into quartiles") {
  const Index n = 4000;
  Eigen::VectorXd t(n);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(21, static_cast<std::uint64_t>(i));
    t(i) = rng.uniform() < 0.4 ? 0.0 : std::exp(2.0 * rng.normal());
  }
  const auto p = make_partition(t, BinKind::zero_plus_quantiles, 5);
  REQUIRE(p.n_bins() == 5);
  CHECK(p.midpoints(0) == 0.0);
  const auto labels = p.labels(t);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(5);
  Index zeros = 0;
  for (Index i = 0; i < n; ++i) {
    counts(labels.bin(i)) += 1.0;
    if (t(i) == 0.0) {
      ++zeros;
      CHECK(labels.bin(i) == 0);
    } else {
      CHECK(labels.bin(i) > 0);
    }
  }
  CHECK(counts(0) == static_cast<double>(zeros));
  const double positives = static_cast<double>(n - zeros);
  for (Index b = 1; b < 5; ++b) CHECK(std::abs(counts(b) / positives - 0.25) < 0.01);
}

TEST_CASE("heavy ties merge quantile edges with a warning") {
  const Index n = 1000;
  // 40% distinct low values, 50% tied at 3, 10% distinct high values.
  Eigen::VectorXd t = Eigen::VectorXd::Constant(n, 3.0);
  for (Index i = 0; i < 400; ++i) t(i) = static_cast<double>(i) / 400.0;
  for (Index i = 900; i < n; ++i) t(i) = 10.0 + static_cast<double>(i);
  const auto p = make_partition(t, BinKind::quantile, 4);
  CHECK(p.n_bins() == 3);
  CHECK(!p.warnings.empty());
  const auto labels = p.labels(t);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(p.n_bins());
  for (Index i = 0; i < n; ++i) counts(labels.bin(i)) += 1.0;
  CHECK((counts.array() > 0).all());
}

TEST_CASE("partition errors") {
  const Eigen::VectorXd constant = Eigen::VectorXd::Constant(20, 1.0);
  CHECK_THROWS_AS(make_partition(constant, BinKind::quantile, 3), DataError);
  CHECK_THROWS_AS(make_partition(constant, BinKind::equal_width, 3), DataError);
  Eigen::VectorXd no_zero = Eigen::VectorXd::LinSpaced(20, 1, 20);
  CHECK_THROWS_AS(make_partition(no_zero, BinKind::zero_plus_quantiles, 3), DataError);
  Eigen::VectorXd frac = Eigen::VectorXd::LinSpaced(20, 0, 1);
  CHECK_THROWS_AS(make_partition(frac, BinKind::unit_integer, 0), ValidationError);
  CHECK_THROWS_AS(make_partition(no_zero, BinKind::quantile, 1), ValidationError);
  CHECK_THROWS_AS(bin_kind_from_string("log"), ValidationError);
  // One isolated high value leaves an empty equal-width bin.
  Eigen::VectorXd gap(6);
  gap << 0, 0.1, 0.2, 0.3, 0.4, 10;
  CHECK_THROWS_AS(make_partition(gap, BinKind::equal_width, 3), DataError);
}

TEST_CASE("masses, weights and membership") {
  const Index n = 3000;
  Eigen::VectorXd t(n);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(22, static_cast<std::uint64_t>(i));
    t(i) = static_cast<double>(sample_poisson(rng, 4.0));
  }
  for (BinKind kind : {BinKind::equal_width, BinKind::quantile, BinKind::unit_integer}) {
    Index dropped = 0;
    Eigen::VectorXd tt = t;
    if (kind == BinKind::unit_integer) {
      SimSample s;
      s.table = table_from_t(t);
      s.stratum = Eigen::VectorXi::Zero(n);
      s.f_t = t;
      tt = trim_to_consecutive_support(s, &dropped).table.t;
    }
    const auto p = make_partition(tt, kind, 5);
    CHECK(p.masses.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.weights.head(p.n_bins() - 1).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p.weights(p.n_bins() - 1) == 0.0);
    for (Index b = 0; b + 1 < p.n_bins(); ++b) {
      CHECK(p.weights(b) == doctest::Approx(p.masses(b) / (1.0 - p.masses(p.n_bins() - 1))));
    }
    const auto labels = p.labels(tt);
    for (Index i = 0; i < tt.size(); ++i) {
      const int b = labels.bin(i);
      CHECK(tt(i) >= p.edges(b));
      CHECK((tt(i) < p.edges(b + 1) || (b == p.n_bins() - 1 && tt(i) == p.edges(b + 1))));
    }
    if (kind == BinKind::unit_integer) {
      for (Index b = 0; b < p.n_bins(); ++b) CHECK(p.midpoints(b) == tt.minCoeff() + b);
    }
  }
}

TEST_CASE("choose_k rules") {
  CHECK(choose_k(1'000'000) == 7);
  CHECK(choose_k(1'000'000, 1.0) == 10);
  CHECK(choose_k(1'000'000, 3.0) == 4);
  CHECK(choose_k(1'000'000, 3.0) == std::llround(std::pow(10.0, 0.6)));
  for (double d : {0.5, 1.0, 2.0, 3.0, 10.0}) CHECK(choose_k(128, d) >= 2);
  CHECK(choose_k(2) == 2);
  CHECK_THROWS_AS(choose_k(1), ValidationError);
}

TEST_CASE("two-cut closed form") {
  BinaryCutStrata s;
  s.pi = Eigen::Vector2d(0.5, 0.5);
  s.p2 = Eigen::Vector2d(0.5, 0.1);
  s.f_upper = Eigen::Vector2d(2, 4);
  s.f_lower = Eigen::Vector2d(1, 1);
  const auto r = coarsened_rorr_binary_plim(s);
  CHECK(r.beta2 == doctest::Approx((0.25 * 1 + 0.09 * 3) / 0.34).epsilon(1e-14));
  CHECK(r.beta2 == doctest::Approx(1.52941).epsilon(1e-5));
  s.p2 = Eigen::Vector2d(0.3, 0.3);
  CHECK(coarsened_rorr_binary_plim(s).beta2 == doctest::Approx(0.5 * 1 + 0.5 * 3));
  s.p2 = Eigen::Vector2d(0.5, 0.1);
  s.f_upper = Eigen::Vector2d(3.5, 2.5);
  s.f_lower = Eigen::Vector2d(1.5, 0.5);
  CHECK(coarsened_rorr_binary_plim(s).beta2 == doctest::Approx(2.0));
  s.p2 = Eigen::Vector2d(0.0, 1.0);
  CHECK_THROWS_AS(coarsened_rorr_binary_plim(s), NumericError);
}

TEST_CASE("two-bin coarsened RORR with exact nuisances matches the closed form") {
  PoissonCategoricalDGP dgp;
  dgp.pi = Eigen::Vector2d(0.5, 0.5);
  dgp.lambda = Eigen::Vector2d(1.0, 4.0);
  dgp.g = Eigen::Vector2d(0.5, -1.0);
  dgp.seed = 31;
  const auto s = sample_dgp(dgp, 100000);
  const double cut = 2.0;
  const auto part = cut_partition(s.table.t, cut);
  // Closed form by direct summation of the Poisson mass functions.
  BinaryCutStrata strata;
  strata.pi = dgp.pi;
  strata.p2.resize(2);
  strata.f_upper.resize(2);
  strata.f_lower.resize(2);
  Eigen::VectorXd mean_f(2);
  for (Index j = 0; j < 2; ++j) {
    double lo = 0, lo_f = 0, hi = 0, hi_f = 0;
    for (int t = 0; t < 200; ++t) {
      const double p = pmf(t, dgp.lambda(j));
      (t < cut ? lo : hi) += p;
      (t < cut ? lo_f : hi_f) += p * std::log1p(t);
    }
    strata.p2(j) = hi / (lo + hi);
    strata.f_upper(j) = hi_f / hi;
    strata.f_lower(j) = lo_f / lo;
    mean_f(j) = lo_f + hi_f;
  }
  const double beta2 = coarsened_rorr_binary_plim(strata).beta2;
  Eigen::VectorXd ghat(s.table.n());
  Eigen::MatrixXd phat(s.table.n(), 2);
  for (Index i = 0; i < s.table.n(); ++i) {
    const int j = s.stratum(i);
    ghat(i) = mean_f(j) + dgp.g(j);
    phat(i, 0) = 1.0 - strata.p2(j);
    phat(i, 1) = strata.p2(j);
  }
  const auto r = coarsened_rorr(s.table, part, ghat, phat);
  CHECK(r.coefficients.size() == 1);
  CHECK(r.estimate == r.coefficients(0));
  CHECK(std::abs(r.estimate - beta2) < 3.0 * r.se);
}

TEST_CASE("two-bin coarsened RORR equals RORR on the binarized treatment") {
  PoissonCategoricalDGP dgp;
  dgp.pi = Eigen::Vector3d(0.2, 0.3, 0.5);
  dgp.lambda = Eigen::Vector3d(0.5, 2.0, 6.0);
  dgp.seed = 32;
  auto s = sample_dgp(dgp, 5000);
  const auto part = cut_partition(s.table.t, 3.0);
  LearnerSpec spec;
  spec.kind = LearnerKind::stratum_mean;
  const auto folds = make_folds(s.table.n(), 5, 1);
  const BinLabels labels = part.labels(s.table.t);
  const NuisanceFit fit =
      cross_fit(s.table, folds, spec, NuisanceTargets{true, false, false, true}, &labels);
  const auto coarse = coarsened_rorr(s.table, part, fit);
  ObservationTable binary = s.table;
  binary.t = labels.bin.cast<double>();
  NuisanceFit bfit = fit;
  bfit.hhat = fit.phat.col(1);
  const auto plain = rorr_from_nuisance(binary, bfit);
  CHECK(coarse.estimate == doctest::Approx(plain.theta_hat).epsilon(1e-10));
  CHECK(coarse.se == doctest::Approx(plain.se).epsilon(1e-10));
}

TEST_CASE("homogeneous bin effects give the common effect") {
  const Index n = 3000;
  ObservationTable tab;
  tab.y.resize(n);
  tab.t.resize(n);
  tab.x_num.resize(n, 0);
  tab.x_cat.resize(n, 1);
  Eigen::MatrixXd probs(2, 3);
  probs << 0.5, 0.3, 0.2, 0.1, 0.3, 0.6;
  Eigen::VectorXi stratum(n);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(41, static_cast<std::uint64_t>(i));
    stratum(i) = static_cast<int>(rng.below(2));
    const double u = rng.uniform();
    const int b = u < probs(stratum(i), 0) ? 0 : (u < probs(stratum(i), 0) + probs(stratum(i), 1) ? 1 : 2);
    tab.t(i) = static_cast<double>(b);
    tab.x_cat(i, 0) = stratum(i);
    tab.y(i) = 0.7 * (b > 0 ? 1.0 : 0.0) + 3.0 * stratum(i);
  }
  const auto part = make_partition(tab.t, BinKind::unit_integer, 0);
  Eigen::VectorXd ghat(n);
  Eigen::MatrixXd phat(n, 3);
  for (Index i = 0; i < n; ++i) {
    phat.row(i) = probs.row(stratum(i));
    ghat(i) = 0.7 * (1.0 - probs(stratum(i), 0)) + 3.0 * stratum(i);
  }
  const auto r = coarsened_rorr(tab, part, ghat, phat);
  CHECK(r.coefficients(0) == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(r.coefficients(1) == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(r.estimate == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(r.estimate == doctest::Approx(part.weights.head(2).dot(r.coefficients)));
}

TEST_CASE("collinear residualized indicators are a rank error") {
  const Eigen::VectorXd t = (Eigen::VectorXd(6) << 0, 1, 2, 0, 1, 2).finished();
  auto tab = table_from_t(t);
  tab.y = Eigen::VectorXd::LinSpaced(6, 0, 1);
  const auto part = make_partition(t, BinKind::unit_integer, 0);
  Eigen::MatrixXd phat = Eigen::MatrixXd::Zero(6, 3);
  for (Index i = 0; i < 6; ++i) phat(i, static_cast<Index>(t(i))) = 1.0;
  CHECK_THROWS_AS(coarsened_rorr(tab, part, Eigen::VectorXd::Zero(6), phat), NumericError);
}

TEST_CASE("aipw acd arithmetic on synthetic means") {
  const Eigen::VectorXd t = (Eigen::VectorXd(3) << 0, 1, 2).finished();
  const auto part = make_partition(t, BinKind::unit_integer, 0);
  CHECK(part.weights(0) == doctest::Approx(0.5));
  CHECK(part.weights(1) == doctest::Approx(0.5));
  CounterfactualMeans m;
  m.psi = Eigen::Vector3d(1, 2, 4);
  const auto r = aipw_acd(m, part);
  CHECK(r.estimate == doctest::Approx(1.5));
  CHECK(std::isnan(r.se));
  CHECK(r.bin_effects(0) == doctest::Approx(1.0));
  CHECK(r.bin_effects(1) == doctest::Approx(2.0));
  // Linear in psi.
  CounterfactualMeans scaled;
  scaled.psi = 3.0 * m.psi.array() + 7.0;
  CHECK(aipw_acd(scaled, part).estimate == doctest::Approx(3.0 * 1.5));
  CHECK(aipw_aie(m, part).estimate == doctest::Approx(1.5));
}

TEST_CASE("aipw estimator errors") {
  const Eigen::VectorXd t = (Eigen::VectorXd(4) << 0, 1, 3, 3).finished();
  const auto gap = make_partition(t, BinKind::unit_integer, 0);
  CounterfactualMeans m;
  m.psi = Eigen::Vector3d(0, 1, 2);
  try {
    aipw_aie(m, gap);
    FAIL("expected a gap error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("gap error") != std::string::npos);
    CHECK(std::string(e.what()).find('2') != std::string::npos);
  }
  auto eq = make_partition(Eigen::VectorXd::LinSpaced(9, 0, 8), BinKind::equal_width, 3);
  CHECK_THROWS_AS(aipw_aie(m, eq), ValidationError);
  eq.midpoints(2) = eq.midpoints(1);
  CHECK_THROWS_AS(aipw_acd(m, eq), NumericError);
  // Propensity below the clip floor.
  auto tab = table_from_t(Eigen::VectorXd::LinSpaced(9, 0, 8));
  const auto part = make_partition(tab.t, BinKind::equal_width, 3);
  Eigen::MatrixXd phat = Eigen::MatrixXd::Constant(9, 3, 1.0 / 3.0);
  phat(0, 0) = 1e-6;
  CHECK_THROWS_AS(aipw_bin_means(tab, part, phat, Eigen::MatrixXd::Zero(9, 3), 1e-3),
                  ValidationError);
}

TEST_CASE("constant nuisances at bin frequencies reduce to bin means") {
  const Index n = 2000;
  auto tab = table_from_t(Eigen::VectorXd::Zero(n));
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(43, static_cast<std::uint64_t>(i));
    tab.t(i) = static_cast<double>(rng.below(4));
    tab.y(i) = std::sqrt(tab.t(i)) + rng.normal();
  }
  const auto part = make_partition(tab.t, BinKind::unit_integer, 0);
  const Eigen::MatrixXd phat = part.masses.transpose().replicate(n, 1);
  const Eigen::MatrixXd mhat = Eigen::MatrixXd::Constant(n, 4, -17.0);
  const auto means = aipw_bin_means(tab, part, phat, mhat, 1e-3);
  for (Index b = 0; b < 4; ++b) {
    double s = 0.0, c = 0.0;
    for (Index i = 0; i < n; ++i) {
      if (tab.t(i) == static_cast<double>(b)) {
        s += tab.y(i);
        c += 1.0;
      }
    }
    CHECK(means.psi(b) == doctest::Approx(s / c).epsilon(1e-12));
    CHECK(means.psi(b) == doctest::Approx(means.influence.col(b).mean()).epsilon(1e-14));
  }
  // Difference of bin means is then the AIE.
  const auto aie = aipw_aie(means, part);
  double oracle = 0.0;
  for (Index b = 0; b < 3; ++b) oracle += part.weights(b) * (means.psi(b + 1) - means.psi(b));
  CHECK(aie.estimate == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(aie.se > 0.0);
  CHECK(aie.ci95.first == doctest::Approx(aie.estimate - 1.96 * aie.se));
}

TEST_CASE("affine dose with exact nuisances recovers the slope on interior unit bins") {
  PoissonCategoricalDGP dgp;
  dgp.pi = Eigen::Vector3d(0.3, 0.4, 0.3);
  dgp.lambda = Eigen::Vector3d(1.0, 3.0, 6.0);
  dgp.g = Eigen::Vector3d(1.0, 0.0, -2.0);
  dgp.f.kind = DoseKind::affine;
  dgp.f.intercept = 1.0;
  dgp.f.slope = 2.0;
  dgp.noise_sd = 0.0;
  dgp.seed = 44;
  const auto s = trim_to_consecutive_support(sample_dgp(dgp, 20000));
  const auto part = make_partition(s.table.t, BinKind::unit_integer, 0);
  const auto fit = true_nuisance(dgp, s, part, 1e-3);
  const auto means = aipw_bin_means(s.table, part, fit);
  const Index k = part.n_bins();
  const auto acd = aipw_acd(means, part);
  for (Index b = 0; b + 2 < k; ++b) CHECK(acd.bin_effects(b) == doctest::Approx(2.0).epsilon(1e-9));
  // The top bin also holds the unobserved tail, so its mean dose exceeds its midpoint.
  const auto bc = bin_conditionals(dgp, part);
  Eigen::VectorXd psi = Eigen::VectorXd::Zero(k);
  for (Index i = 0; i < s.table.n(); ++i) {
    const int j = s.stratum(i);
    psi += (1.0 + dgp.g(j) + 2.0 * bc.t_mean.row(j).array()).matrix().transpose();
  }
  psi /= static_cast<double>(s.table.n());
  for (Index b = 0; b + 1 < k; ++b) CHECK(means.psi(b) == doctest::Approx(psi(b)).epsilon(1e-9));
  // Y still varies within the top bin, so its augmentation term is only zero in mean.
  CHECK(std::abs(means.psi(k - 1) - psi(k - 1)) < 4.0 * means.se(k - 1));
  CounterfactualMeans oracle;
  oracle.psi = psi;
  CHECK(std::abs(acd.estimate - aipw_acd(oracle, part).estimate) < 4.0 * acd.se);
  CHECK(aipw_aie(means, part).estimate == doctest::Approx(acd.estimate).epsilon(1e-12));
  CHECK(std::abs(acd.estimate - 2.0) < 1e-3);
}

TEST_CASE("exact nuisances give bin means at the conditional-expectation oracle") {
  PoissonCategoricalDGP dgp = PoissonCategoricalDGP::canonical();
  dgp.seed = 45;
  double se_small = 0.0, se_large = 0.0;
  for (Index n : {Index{10000}, Index{100000}}) {
    const auto s = sample_dgp(dgp, n);
    const auto part = make_partition(s.table.t, BinKind::equal_width, 4);
    const auto fit = true_nuisance(dgp, s, part, 1e-3);
    const auto means = aipw_bin_means(s.table, part, fit);
    for (Index b = 0; b < 4; ++b) {
      // sum_x pi_x sum_{t in S_b} f(t) p(t|x) / Pr(S_b | x), by direct summation.
      double oracle = 0.0;
      for (Index j = 0; j < 3; ++j) {
        double mass = 0.0, acc = 0.0;
        for (int t = 0; t < 200; ++t) {
          const double tv = t;
          const int bin = tv < part.edges(0) ? 0 : (tv > part.edges(4) ? 3 : part.bin_of(tv));
          if (bin != b) continue;
          mass += pmf(t, dgp.lambda(j));
          acc += pmf(t, dgp.lambda(j)) * std::log1p(tv);
        }
        oracle += dgp.pi(j) * acc / mass;
      }
      CHECK(std::abs(means.psi(b) - oracle) < 4.0 * means.se(b));
    }
    (n == 10000 ? se_small : se_large) = means.se(0);
  }
  CHECK(se_small / se_large == doctest::Approx(std::sqrt(10.0)).epsilon(0.1));
}

TEST_CASE("finer bins move the population ACD aggregate toward the true ACD") {
  PoissonCategoricalDGP dgp = PoissonCategoricalDGP::canonical();
  dgp.seed = 46;
  auto s = sample_dgp(dgp, 200000);
  // Population version of each ingredient: psi_k and masses from the DGP.
  double last = std::numeric_limits<double>::infinity();
  const double truth = acd_analytic(dgp);
  for (Index k : {Index{2}, Index{4}, Index{8}}) {
    auto part = make_partition(s.table.t, BinKind::equal_width, k);
    const auto bc = bin_conditionals(dgp, part);
    CounterfactualMeans m;
    m.psi = bc.f_mean.transpose() * dgp.pi;
    part.masses = bc.prob.transpose() * dgp.pi;
    for (Index b = 0; b + 1 < k; ++b) part.weights(b) = part.masses(b) / (1.0 - part.masses(k - 1));
    const double err = std::abs(aipw_acd(m, part).estimate - truth);
    CHECK(err < last);
    last = err;
  }
}
