#include "rorrlab/error.hpp"
#include "rorrlab/nuisance.hpp"
#include "rorrlab/rng.hpp"

#include <doctest.h>

#include <map>

using namespace rorrlab;

namespace {

// Two categorical covariates with 3 and 2 levels; y depends on both.
ObservationTable categorical_table(Index n, std::uint64_t seed, double noise = 1.0) {
  ObservationTable tab;
  tab.y.resize(n);
  tab.t.resize(n);
  tab.x_num.resize(n, 0);
  tab.x_cat.resize(n, 2);
  tab.cat_names = {"a", "b"};
  tab.cat_levels = {{"0", "1", "2"}, {"0", "1"}};
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    const int a = static_cast<int>(rng.below(3));
    const int b = static_cast<int>(rng.below(2));
    tab.x_cat(i, 0) = a;
    tab.x_cat(i, 1) = b;
    tab.t(i) = rng.uniform() < 0.2 + 0.2 * a ? 1.0 : 0.0;
    tab.y(i) = a - 2.0 * b + tab.t(i) + noise * rng.normal();
  }
  return tab;
}

// Group-by mean of `v` over the rows in `rows`, keyed by the covariate pair.
std::map<std::pair<int, int>, double> group_means(const ObservationTable& tab,
                                                  const Eigen::VectorXd& v,
                                                  const std::vector<Index>& rows) {
  std::map<std::pair<int, int>, std::pair<double, int>> acc;
  for (Index i : rows) {
    auto& cell = acc[{tab.x_cat(i, 0), tab.x_cat(i, 1)}];
    cell.first += v(i);
    cell.second += 1;
  }
  std::map<std::pair<int, int>, double> out;
  for (auto& [k, c] : acc) out[k] = c.first / c.second;
  return out;
}

LearnerSpec stratum_spec() {
  LearnerSpec s;
  s.kind = LearnerKind::stratum_mean;
  return s;
}

}  // namespace

TEST_CASE("stratum means on a binary covariate") {
  Eigen::MatrixXd x(4, 1);
  x << 0, 0, 1, 1;
  const Eigen::Vector4d y(1, 1, 3, 3);
  const Predictor p = fit_regression(x, y, stratum_spec());
  CHECK(p.predict_one(Eigen::RowVectorXd::Constant(1, 0.0)) == 1.0);
  CHECK(p.predict_one(Eigen::RowVectorXd::Constant(1, 1.0)) == 3.0);
  bool fell_back = false;
  CHECK(p.predict_one(Eigen::RowVectorXd::Constant(1, 5.0), &fell_back) == 2.0);
  CHECK(fell_back);
}

TEST_CASE("stratum means require integer-coded features") {
  Eigen::MatrixXd x(3, 1);
  x << 0.5, 1, 2;
  CHECK_THROWS_AS(fit_regression(x, Eigen::Vector3d(1, 2, 3), stratum_spec()), ValidationError);
}

TEST_CASE("boosted stumps fit a step function") {
  const Index n = 400;
  Eigen::MatrixXd x(n, 1);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
    y(i) = x(i, 0) > 0.0 ? 1.0 : 0.0;
  }
  LearnerSpec s;
  s.rounds = 60;
  s.validation_fraction = 0.0;
  const Predictor p = fit_regression(x, y, s);
  const double mse = (p.predict(x) - y).squaredNorm() / static_cast<double>(n);
  CHECK(mse < 0.01);
  // Oracle: the true threshold separates the classes exactly.
  CHECK(p.predict_one(Eigen::RowVectorXd::Constant(1, -0.5)) < 0.01);
  CHECK(p.predict_one(Eigen::RowVectorXd::Constant(1, 0.5)) > 0.99);
  const auto& loss = p.training_loss();
  for (std::size_t r = 1; r < loss.size(); ++r) CHECK(loss[r] <= loss[r - 1] + 1e-15);
}

TEST_CASE("constant target gives a constant predictor") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(100, 3);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(100, 4.25);
  LearnerSpec s;
  s.rounds = 20;
  const Predictor p = fit_regression(x, y, s);
  const Eigen::VectorXd pred = p.predict((Eigen::MatrixXd::Random(10, 3) * 5.0).eval());
  CHECK((pred.array() == 4.25).all());
}

TEST_CASE("training loss is non-increasing with validation tuning") {
  const Index n = 2000;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXd y(n);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(3, static_cast<std::uint64_t>(i));
    x(i, 0) = rng.uniform();
    x(i, 1) = rng.uniform();
    y(i) = std::sin(6.0 * x(i, 0)) + x(i, 1) + 0.3 * rng.normal();
  }
  LearnerSpec s;
  s.rounds = 200;
  const Predictor p = fit_regression(x, y, s);
  CHECK(p.rounds_used() >= 1);
  CHECK(p.rounds_used() <= 200);
  const auto& loss = p.training_loss();
  for (std::size_t r = 1; r < loss.size(); ++r) CHECK(loss[r] <= loss[r - 1] + 1e-12);
}

TEST_CASE("stratum frequencies") {
  Eigen::MatrixXd x(4, 1);
  x << 0, 0, 0, 1;
  Eigen::VectorXi labels(4);
  labels << 0, 0, 1, 1;
  LearnerSpec s = stratum_spec();
  const auto m = fit_multiclass(x, labels, 2, s);
  const auto p = m.predict_proba(Eigen::MatrixXd::Zero(1, 1));
  CHECK(p.probs(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(p.probs(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("missing class is a class-support error") {
  Eigen::MatrixXd x(3, 1);
  x << 0, 1, 0;
  Eigen::VectorXi labels(3);
  labels << 0, 2, 0;
  CHECK_THROWS_AS(fit_multiclass(x, labels, 3, stratum_spec()), DataError);
}

TEST_CASE("labels independent of X give marginal frequencies") {
  const Index n = 10000;
  Eigen::MatrixXd x(n, 2);
  Eigen::VectorXi labels(n);
  Eigen::Vector3d freq = Eigen::Vector3d::Zero();
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(11, static_cast<std::uint64_t>(i));
    x(i, 0) = rng.uniform();
    x(i, 1) = rng.normal();
    const double u = rng.uniform();
    labels(i) = u < 0.5 ? 0 : (u < 0.8 ? 1 : 2);
    freq(labels(i)) += 1.0 / static_cast<double>(n);
  }
  LearnerSpec s;
  s.rounds = 100;
  const auto m = fit_multiclass(x, labels, 3, s);
  const auto p = m.predict_proba(x);
  for (Index i = 0; i < n; ++i) {
    for (Index k = 0; k < 3; ++k) CHECK(std::abs(p.probs(i, k) - freq(k)) < 0.02);
    CHECK(p.probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("clipping bounds and renormalizes") {
  Eigen::MatrixXd raw(3, 3);
  raw << 1.0, 0.0, 0.0, 0.3, 0.3, 0.4, 1e-9, 0.5, 0.5 - 1e-9;
  const double clip = 0.01;
  const auto c = clip_and_normalize(raw, clip);
  const double floor = clip_floor(clip, 3);
  for (Index i = 0; i < 3; ++i) {
    CHECK(c.probs.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.probs.row(i).minCoeff() >= floor - 1e-15);
  }
  CHECK(c.clipped(0, 1));
  CHECK(c.clipped(2, 0));
  CHECK(!c.clipped(1, 0));
  CHECK(c.probs.row(1).isApprox(raw.row(1)));
}

TEST_CASE("cross-fitted stratum means equal the other fold's group means") {
  const auto tab = categorical_table(600, 5);
  const auto folds = make_folds(tab.n(), 2, 9);
  const NuisanceFit fit = cross_fit(tab, folds, stratum_spec(), NuisanceTargets{});
  for (int k = 0; k < 2; ++k) {
    const auto g = group_means(tab, tab.y, folds.rows_outside(k));
    const auto h = group_means(tab, tab.t, folds.rows_outside(k));
    for (Index i : folds.rows_in(k)) {
      const std::pair<int, int> key{tab.x_cat(i, 0), tab.x_cat(i, 1)};
      CHECK(std::abs(fit.ghat(i) - g.at(key)) < 1e-12);
      CHECK(std::abs(fit.hhat(i) - h.at(key)) < 1e-12);
    }
  }
}

TEST_CASE("in-sample stratum means equal the group-by oracle") {
  const auto tab = categorical_table(500, 6);
  std::vector<Index> all(static_cast<std::size_t>(tab.n()));
  for (Index i = 0; i < tab.n(); ++i) all[static_cast<std::size_t>(i)] = i;
  const auto g = group_means(tab, tab.y, all);
  const NuisanceFit fit = fit_in_sample(tab, stratum_spec(), NuisanceTargets{});
  for (Index i = 0; i < tab.n(); ++i) {
    CHECK(std::abs(fit.ghat(i) - g.at({tab.x_cat(i, 0), tab.x_cat(i, 1)})) < 1e-12);
  }
}

TEST_CASE("cross-fit differs from in-sample on noisy targets and is deterministic") {
  const auto tab = categorical_table(300, 7);
  const auto folds = make_folds(tab.n(), 5, 1);
  const NuisanceFit a = cross_fit(tab, folds, stratum_spec(), NuisanceTargets{});
  const NuisanceFit b = fit_in_sample(tab, stratum_spec(), NuisanceTargets{});
  CHECK((a.ghat - b.ghat).cwiseAbs().maxCoeff() > 1e-3);
  LearnerSpec boosted;
  boosted.rounds = 30;
  const NuisanceFit c = cross_fit(tab, folds, boosted, NuisanceTargets{});
  const NuisanceFit d = cross_fit(tab, folds, boosted, NuisanceTargets{});
  CHECK(c.ghat == d.ghat);
  CHECK(c.hhat == d.hhat);
}

TEST_CASE("predictions for a fold ignore that fold's outcomes") {
  auto tab = categorical_table(400, 8);
  const auto folds = make_folds(tab.n(), 4, 2);
  LearnerSpec boosted;
  boosted.rounds = 25;
  const NuisanceFit before = cross_fit(tab, folds, boosted, NuisanceTargets{});
  for (Index i : folds.rows_in(1)) tab.y(i) += 100.0;
  const NuisanceFit after = cross_fit(tab, folds, boosted, NuisanceTargets{});
  for (Index i : folds.rows_in(1)) CHECK(before.ghat(i) == after.ghat(i));
  bool other_changed = false;
  for (Index i : folds.rows_in(0)) other_changed |= before.ghat(i) != after.ghat(i);
  CHECK(other_changed);
}

TEST_CASE("bin nuisances and their shapes") {
  const auto tab = categorical_table(900, 12);
  BinLabels bins;
  bins.n_bins = 2;
  bins.bin = tab.t.cast<int>();
  const auto folds = make_folds(tab.n(), 3, 4);
  const NuisanceFit fit =
      cross_fit(tab, folds, stratum_spec(), NuisanceTargets{false, false, true, true}, &bins);
  CHECK(fit.mhat.rows() == tab.n());
  CHECK(fit.mhat.cols() == 2);
  CHECK(fit.phat.cols() == 2);
  for (Index i = 0; i < tab.n(); ++i) CHECK(fit.phat.row(i).sum() == doctest::Approx(1.0));
  // m_1 is the treated-row group mean in the training complement.
  for (int k = 0; k < 3; ++k) {
    std::vector<Index> treated;
    for (Index i : folds.rows_outside(k)) {
      if (bins.bin(i) == 1) treated.push_back(i);
    }
    const auto m = group_means(tab, tab.y, treated);
    for (Index i : folds.rows_in(k)) {
      const auto it = m.find({tab.x_cat(i, 0), tab.x_cat(i, 1)});
      if (it != m.end()) CHECK(std::abs(fit.mhat(i, 1) - it->second) < 1e-12);
    }
  }
}

TEST_CASE("empty fold-bin cell is a sparse-cell error") {
  auto tab = categorical_table(50, 13);
  tab.t.setZero();
  tab.t(0) = 1.0;
  BinLabels bins;
  bins.n_bins = 2;
  bins.bin = tab.t.cast<int>();
  const auto folds = make_folds(tab.n(), 2, 0);
  try {
    cross_fit(tab, folds, stratum_spec(), NuisanceTargets{false, false, true, false}, &bins);
    FAIL("expected a sparse-cell error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("sparse-cell error") != std::string::npos);
  }
}

TEST_CASE("stratum means reject numeric covariates") {
  auto tab = categorical_table(50, 14);
  tab.x_num = Eigen::MatrixXd::Random(50, 1);
  tab.num_names = {"z"};
  CHECK_THROWS_AS(cross_fit(tab, make_folds(50, 2, 0), stratum_spec(), NuisanceTargets{}),
                  ValidationError);
}

TEST_CASE("holdout scheme predicts only the test rows") {
  const auto tab = categorical_table(1000, 15);
  const auto split = make_holdout_split(tab.n(), 0.2, 0.3, 3);
  LearnerSpec boosted;
  boosted.rounds = 40;
  const auto h = fit_holdout(tab, split, boosted, NuisanceTargets{});
  CHECK(h.test.n() == static_cast<Index>(split.test.size()));
  CHECK(h.fit.ghat.size() == h.test.n());
  CHECK(h.fit.scheme == NuisanceScheme::holdout);
}

TEST_CASE("learner spec validation") {
  LearnerSpec s;
  s.rounds = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = LearnerSpec{};
  s.learning_rate = 1.5;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s = LearnerSpec{};
  s.clip = 0.0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  CHECK(learner_kind_from_string("stratum_mean") == LearnerKind::stratum_mean);
  CHECK_THROWS_AS(learner_kind_from_string("forest"), ValidationError);
}
