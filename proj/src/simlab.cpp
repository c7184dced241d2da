#include "rorrlab/simlab.hpp"

#include "rorrlab/error.hpp"
#include "rorrlab/parallel.hpp"
#include "rorrlab/quadrature.hpp"
#include "rorrlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rorrlab {

namespace {

const char* kModule = "simlab";

constexpr std::uint64_t kShards = 16;

// Upper end of the enumerated Poisson support.
std::int64_t support_limit(double lambda) {
  return static_cast<std::int64_t>(std::ceil(lambda + 20.0 * std::sqrt(lambda) + 20.0));
}

// Stratified Poisson draws, round(draws * pi_j) per stratum (at least one).
std::vector<std::vector<std::int64_t>> stratified_draws(const PoissonCategoricalDGP& dgp,
                                                        Index draws, std::uint64_t seed) {
  std::vector<std::vector<std::int64_t>> out;
  for (Index j = 0; j < dgp.strata(); ++j) {
    const auto n_j = std::max<Index>(1, std::llround(static_cast<double>(draws) * dgp.pi(j)));
    const double lambda = dgp.lambda(j);
    auto shards = parallel_map(kShards, [&](std::size_t s) {
      const auto base = static_cast<Index>(static_cast<std::uint64_t>(n_j) / kShards);
      const auto extra = static_cast<Index>(s) < static_cast<Index>(static_cast<std::uint64_t>(n_j) % kShards) ? 1 : 0;
      CounterRng rng(seed, (static_cast<std::uint64_t>(j) << 20) | s);
      std::vector<std::int64_t> v(static_cast<std::size_t>(base + extra));
      for (auto& t : v) t = sample_poisson(rng, lambda);
      return v;
    });
    std::vector<std::int64_t> all;
    all.reserve(static_cast<std::size_t>(n_j));
    for (auto& s : shards) all.insert(all.end(), s.begin(), s.end());
    out.push_back(std::move(all));
  }
  return out;
}

// Stratified mean of per-draw values plus the variance of that mean.
struct Stratified {
  double mean = 0.0;
  double var = 0.0;
};

template <typename Fn>
Stratified stratified_mean(const PoissonCategoricalDGP& dgp,
                           const std::vector<std::vector<std::int64_t>>& draws, Fn&& value) {
  Stratified acc;
  for (Index j = 0; j < dgp.strata(); ++j) {
    const auto& d = draws[static_cast<std::size_t>(j)];
    const double lambda = dgp.lambda(j);
    double s = 0.0, ss = 0.0;
    for (std::int64_t t : d) {
      const double v = value(static_cast<double>(t), lambda, j);
      s += v;
      ss += v * v;
    }
    const auto n_j = static_cast<double>(d.size());
    const double m = s / n_j;
    const double var_j = n_j > 1 ? std::max(0.0, (ss - n_j * m * m) / (n_j - 1.0)) : 0.0;
    acc.mean += dgp.pi(j) * m;
    acc.var += dgp.pi(j) * dgp.pi(j) * var_j / n_j;
  }
  return acc;
}

// f'(T*) from the mean-value identity, without forming T* when f is affine.
double derivative_at_tstar(const DoseFunction& f, double t, double lambda) {
  if (f.kind == DoseKind::affine) return f.slope;
  return 1.0 / (tstar(t, lambda) + 1.0);
}

double conditional_mean_f(const DoseFunction& f, double lambda) {
  if (f.kind == DoseKind::affine) return f.intercept + f.slope * lambda;
  double acc = 0.0;
  for (std::int64_t t = 0; t <= support_limit(lambda); ++t) {
    acc += std::log1p(static_cast<double>(t)) * poisson_pmf(t, lambda);
  }
  return acc;
}

}  // namespace

double DoseFunction::value(double t) const {
  return kind == DoseKind::log1p ? std::log1p(t) : intercept + slope * t;
}

double DoseFunction::derivative(double t) const {
  return kind == DoseKind::log1p ? 1.0 / (1.0 + t) : slope;
}

std::string DoseFunction::name() const { return kind == DoseKind::log1p ? "log1p" : "affine"; }

void PoissonCategoricalDGP::validate() const {
  if (pi.size() == 0 || pi.size() != lambda.size()) {
    throw ValidationError(kModule, "pi and lambda must be nonempty and of equal length");
  }
  if (g.size() != 0 && g.size() != pi.size()) {
    throw ValidationError(kModule, "g must be empty or match the number of strata");
  }
  if ((pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-9) {
    throw ValidationError(kModule, "pi must be nonnegative and sum to 1");
  }
  if (!(lambda.array() > 0.0).all() || !lambda.allFinite()) {
    throw ValidationError(kModule, "every lambda must be positive and finite");
  }
  if (!(noise_sd >= 0.0)) throw ValidationError(kModule, "noise_sd must be >= 0");
}

PoissonCategoricalDGP PoissonCategoricalDGP::canonical() {
  PoissonCategoricalDGP dgp;
  dgp.pi = Eigen::Vector3d::Constant(1.0 / 3.0);
  dgp.lambda = Eigen::Vector3d(1.0, 3.0, 9.0);
  dgp.g = Eigen::Vector3d::Zero();
  dgp.f = DoseFunction{};
  dgp.noise_sd = 1.0;
  return dgp;
}

std::int64_t sample_poisson(CounterRng& rng, double lambda) {
  if (lambda <= 10.0) {
    const double u = rng.uniform();
    double p = std::exp(-lambda);
    double cdf = p;
    std::int64_t t = 0;
    // The cap only matters when u lands in the last ~1e-16 of mass.
    while (u > cdf && t < 1000) {
      ++t;
      p *= lambda / static_cast<double>(t);
      cdf += p;
    }
    return t;
  }
  // Transformed rejection with squeeze (Hormann, PTRS).
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  while (true) {
    const double u = rng.uniform() - 0.5;
    const double v = rng.uniform();
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
        -lambda + k * loglam - std::lgamma(k + 1.0)) {
      return static_cast<std::int64_t>(k);
    }
  }
}

double poisson_pmf(std::int64_t t, double lambda) {
  if (t < 0) return 0.0;
  const auto x = static_cast<double>(t);
  return std::exp(x * std::log(lambda) - lambda - std::lgamma(x + 1.0));
}

SimSample sample_dgp(const PoissonCategoricalDGP& dgp, Index n) {
  dgp.validate();
  if (n < 1) throw ValidationError(kModule, "sample size must be >= 1");
  SimSample s;
  s.stratum.resize(n);
  s.f_t.resize(n);
  ObservationTable& tab = s.table;
  tab.y.resize(n);
  tab.t.resize(n);
  Eigen::VectorXd cum(dgp.strata());
  std::partial_sum(dgp.pi.data(), dgp.pi.data() + dgp.strata(), cum.data());

  const auto shard_rows = (n + static_cast<Index>(kShards) - 1) / static_cast<Index>(kShards);
  parallel_map(kShards, [&](std::size_t shard) {
    const Index lo = static_cast<Index>(shard) * shard_rows;
    const Index hi = std::min(n, lo + shard_rows);
    for (Index i = lo; i < hi; ++i) {
      CounterRng rng(dgp.seed, static_cast<std::uint64_t>(i));
      const double u = rng.uniform();
      Index j = 0;
      while (j + 1 < dgp.strata() && u > cum(j)) ++j;
      const auto t = static_cast<double>(sample_poisson(rng, dgp.lambda(j)));
      const double e = dgp.noise_sd > 0.0 ? dgp.noise_sd * rng.normal() : 0.0;
      s.stratum(i) = static_cast<int>(j);
      s.f_t(i) = dgp.f.value(t);
      tab.t(i) = t;
      tab.y(i) = s.f_t(i) + dgp.offset(j) + e;
    }
    return 0;
  });

  tab.y_name = "y";
  tab.t_name = "t";
  tab.x_num.resize(n, 0);
  tab.x_cat = s.stratum;
  tab.cat_names = {"x"};
  std::vector<std::string> levels;
  for (Index j = 0; j < dgp.strata(); ++j) levels.push_back(std::to_string(j));
  tab.cat_levels = {levels};
  return s;
}

SimSample sample_binary_strata(const DiscreteStrataModel& model, Index n, std::uint64_t seed,
                               const Eigen::VectorXd& offset, double noise_sd) {
  model.validate();
  if (offset.size() != 0 && offset.size() != model.pi.size()) {
    throw ValidationError(kModule, "offset must be empty or match the number of strata");
  }
  SimSample s;
  s.stratum.resize(n);
  s.f_t.resize(n);
  ObservationTable& tab = s.table;
  tab.y.resize(n);
  tab.t.resize(n);
  Eigen::VectorXd cum(model.pi.size());
  std::partial_sum(model.pi.data(), model.pi.data() + model.pi.size(), cum.data());
  for (Index i = 0; i < n; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    const double u = rng.uniform();
    Index j = 0;
    while (j + 1 < model.pi.size() && u > cum(j)) ++j;
    const double t = rng.uniform() < model.h(j) ? 1.0 : 0.0;
    const double e = noise_sd > 0.0 ? noise_sd * rng.normal() : 0.0;
    s.stratum(i) = static_cast<int>(j);
    s.f_t(i) = model.theta(j) * t;
    tab.t(i) = t;
    tab.y(i) = s.f_t(i) + (offset.size() ? offset(j) : 0.0) + e;
  }
  tab.x_num.resize(n, 0);
  tab.x_cat = s.stratum;
  tab.cat_names = {"x"};
  std::vector<std::string> levels;
  for (Index j = 0; j < model.pi.size(); ++j) levels.push_back(std::to_string(j));
  tab.cat_levels = {levels};
  return s;
}

double acd_analytic(const PoissonCategoricalDGP& dgp) {
  dgp.validate();
  if (dgp.f.kind == DoseKind::affine) return dgp.f.slope;
  double acc = 0.0;
  for (Index j = 0; j < dgp.strata(); ++j) {
    const double lambda = dgp.lambda(j);
    acc += dgp.pi(j) * (-std::expm1(-lambda) / lambda);
  }
  return acc;
}

double aie_analytic(const PoissonCategoricalDGP& dgp) {
  dgp.validate();
  if (dgp.f.kind == DoseKind::affine) return dgp.f.slope;
  double acc = 0.0;
  for (Index j = 0; j < dgp.strata(); ++j) {
    const double lambda = dgp.lambda(j);
    const std::int64_t t_max = support_limit(lambda);
    double term = 0.0;
    double mass = 0.0;
    for (std::int64_t t = 0; t <= t_max; ++t) {
      const double p = poisson_pmf(t, lambda);
      term += std::log1p(1.0 / (static_cast<double>(t) + 1.0)) * p;
      mass += p;
      if (static_cast<double>(t) > lambda && 1.0 - mass < 1e-12) break;
    }
    acc += dgp.pi(j) * term;
  }
  return acc;
}

double tstar(double t, double lambda) {
  if (t == lambda) return t;
  return (t - lambda) / std::log1p((t - lambda) / (lambda + 1.0)) - 1.0;
}

McEstimate rorr_plim_mc(const PoissonCategoricalDGP& dgp, Index draws, std::uint64_t seed) {
  const BiasDecomposition d = bias_decomposition_mc(dgp, draws, seed);
  return {d.plim, d.plim_se};
}

BiasDecomposition bias_decomposition_mc(const PoissonCategoricalDGP& dgp, Index draws,
                                        std::uint64_t seed) {
  dgp.validate();
  if (draws < 2) throw ValidationError(kModule, "draws must be >= 2");
  const auto sample = stratified_draws(dgp, draws, seed);
  const DoseFunction& f = dgp.f;

  const auto sq = [](double t, double lambda, Index) { return (t - lambda) * (t - lambda); };
  const Stratified v = stratified_mean(dgp, sample, sq);
  const double denom = v.mean;
  if (!(denom > 0.0)) throw NumericError(kModule, "no treatment variation in the draws");

  const Stratified num_plim = stratified_mean(dgp, sample, [&](double t, double lambda, Index) {
    return sq(t, lambda, 0) * derivative_at_tstar(f, t, lambda);
  });
  const Stratified num_wd = stratified_mean(dgp, sample, [&](double t, double lambda, Index) {
    return sq(t, lambda, 0) * f.derivative(t);
  });
  const Stratified deriv = stratified_mean(
      dgp, sample, [&](double t, double, Index) { return f.derivative(t); });
  const Stratified cube = stratified_mean(dgp, sample, [&](double t, double lambda, Index) {
    return std::pow(std::abs(t - lambda), 3.0);
  });

  BiasDecomposition out;
  out.plim = num_plim.mean / denom;
  const double weighted_deriv = num_wd.mean / denom;
  out.A = out.plim - weighted_deriv;
  out.B = weighted_deriv - deriv.mean;
  out.kappa = cube.mean / denom;
  out.lipschitz = f.lipschitz();
  out.lipschitz_bound = out.lipschitz * out.kappa;
  out.acd = acd_analytic(dgp);
  out.acd_mc = deriv.mean;
  out.acd_mc_se = std::sqrt(deriv.var);

  // Standard errors of the ratio estimators through their linearizations.
  const Stratified lin_plim = stratified_mean(dgp, sample, [&](double t, double lambda, Index) {
    const double w = sq(t, lambda, 0);
    return (w * derivative_at_tstar(f, t, lambda) - out.plim * w) / denom;
  });
  const Stratified lin_a = stratified_mean(dgp, sample, [&](double t, double lambda, Index) {
    const double w = sq(t, lambda, 0);
    return (w * (derivative_at_tstar(f, t, lambda) - f.derivative(t)) - out.A * w) / denom;
  });
  const Stratified lin_b = stratified_mean(dgp, sample, [&](double t, double lambda, Index) {
    const double w = sq(t, lambda, 0);
    return (w * f.derivative(t) - weighted_deriv * w) / denom - f.derivative(t);
  });
  out.plim_se = std::sqrt(lin_plim.var);
  out.A_se = std::sqrt(lin_a.var);
  out.B_se = std::sqrt(lin_b.var);
  return out;
}

MidpointCheck midpoint_lemma_check(const std::function<double(double)>& f,
                                   const std::function<double(double)>& density, double lo,
                                   double hi, double tolerance) {
  if (!(hi > lo)) throw ValidationError(kModule, "bin must have positive length");
  const double mass = integrate(density, lo, hi, tolerance).value;
  if (!(mass > 0.0)) throw NumericError(kModule, "density integrates to zero on the bin");
  // Relative accuracy of the ratio: scale the numerator tolerance by the mass.
  const double num =
      integrate([&](double t) { return f(t) * density(t); }, lo, hi, tolerance * mass).value;
  MidpointCheck out;
  out.bin_mean = num / mass;
  out.midpoint_value = f(0.5 * (lo + hi));
  out.error = out.bin_mean - out.midpoint_value;
  out.abs_error = std::abs(out.error);
  return out;
}

BinConditionals bin_conditionals(const PoissonCategoricalDGP& dgp, const BinPartition& partition) {
  dgp.validate();
  const Index k = partition.n_bins();
  const double lo = partition.edges(0);
  const double hi = partition.edges(k);
  BinConditionals out;
  out.prob = Eigen::MatrixXd::Zero(dgp.strata(), k);
  out.f_mean = Eigen::MatrixXd::Zero(dgp.strata(), k);
  out.t_mean = Eigen::MatrixXd::Zero(dgp.strata(), k);
  for (Index j = 0; j < dgp.strata(); ++j) {
    const double lambda = dgp.lambda(j);
    for (std::int64_t t = 0; t <= support_limit(lambda); ++t) {
      const auto tv = static_cast<double>(t);
      // Support beyond the partition's range is folded into the end bins.
      const int b = tv < lo ? 0 : (tv > hi ? static_cast<int>(k - 1) : partition.bin_of(tv));
      const double p = poisson_pmf(t, lambda);
      out.prob(j, b) += p;
      out.f_mean(j, b) += p * dgp.f.value(tv);
      out.t_mean(j, b) += p * tv;
    }
    for (Index b = 0; b < k; ++b) {
      if (out.prob(j, b) > 0.0) {
        out.f_mean(j, b) /= out.prob(j, b);
        out.t_mean(j, b) /= out.prob(j, b);
      }
    }
    out.prob.row(j) /= out.prob.row(j).sum();
  }
  return out;
}

NuisanceFit true_nuisance(const PoissonCategoricalDGP& dgp, const SimSample& sample,
                          const BinPartition& partition, double clip) {
  const BinConditionals bc = bin_conditionals(dgp, partition);
  const Index n = sample.table.n();
  const Index k = partition.n_bins();
  Eigen::VectorXd mean_f(dgp.strata());
  for (Index j = 0; j < dgp.strata(); ++j) mean_f(j) = conditional_mean_f(dgp.f, dgp.lambda(j));
  NuisanceFit fit;
  fit.scheme = NuisanceScheme::in_sample;
  fit.clip = clip;
  fit.ghat.resize(n);
  fit.hhat.resize(n);
  fit.mhat.resize(n, k);
  Eigen::MatrixXd raw(n, k);
  for (Index i = 0; i < n; ++i) {
    const int j = sample.stratum(i);
    fit.ghat(i) = mean_f(j) + dgp.offset(j);
    fit.hhat(i) = dgp.lambda(j);
    for (Index b = 0; b < k; ++b) {
      const double fm = bc.prob(j, b) > 0.0 ? bc.f_mean(j, b) : dgp.f.value(partition.midpoints(b));
      fit.mhat(i, b) = fm + dgp.offset(j);
    }
    raw.row(i) = bc.prob.row(j);
  }
  auto clipped = clip_and_normalize(raw, clip);
  fit.phat = std::move(clipped.probs);
  fit.phat_clipped = std::move(clipped.clipped);
  return fit;
}

EffectiveHistogram effective_histogram(const PoissonCategoricalDGP& dgp, Index draws,
                                       std::uint64_t seed) {
  dgp.validate();
  const auto sample = stratified_draws(dgp, draws, seed);
  std::int64_t t_max = 0;
  for (const auto& d : sample) {
    if (!d.empty()) t_max = std::max(t_max, *std::max_element(d.begin(), d.end()));
  }
  const auto cells = static_cast<Index>(t_max + 1);
  EffectiveHistogram out;
  out.t = Eigen::VectorXd::LinSpaced(cells, 0.0, static_cast<double>(t_max));
  out.observed = Eigen::VectorXd::Zero(cells);
  out.effective = Eigen::VectorXd::Zero(cells);
  for (Index j = 0; j < dgp.strata(); ++j) {
    const auto& d = sample[static_cast<std::size_t>(j)];
    const double lambda = dgp.lambda(j);
    const double share = dgp.pi(j) / static_cast<double>(d.size());
    for (std::int64_t t : d) {
      const auto tv = static_cast<double>(t);
      out.observed(static_cast<Index>(t)) += share;
      const double ts = dgp.f.kind == DoseKind::log1p ? tstar(tv, lambda) : 0.5 * (tv + lambda);
      const auto cell = std::clamp<Index>(static_cast<Index>(std::floor(ts)), 0, cells - 1);
      out.effective(cell) += share * (tv - lambda) * (tv - lambda);
    }
  }
  out.effective /= out.effective.sum();
  return out;
}

SimSample trim_to_consecutive_support(const SimSample& sample, Index* dropped) {
  const ObservationTable& tab = sample.table;
  std::vector<double> values(tab.t.data(), tab.t.data() + tab.n());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  double cutoff = values.back();
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    if (values[i + 1] - values[i] > 1.0) {
      cutoff = values[i];
      break;
    }
  }
  std::vector<Index> keep;
  for (Index i = 0; i < tab.n(); ++i) {
    if (tab.t(i) <= cutoff) keep.push_back(i);
  }
  if (dropped != nullptr) *dropped = tab.n() - static_cast<Index>(keep.size());
  if (static_cast<Index>(keep.size()) == tab.n()) return sample;
  SimSample out;
  out.table = tab.subset(keep);
  out.stratum = sample.stratum(keep);
  out.f_t = sample.f_t(keep);
  return out;
}

EstimateReport empirical_aie(const PoissonCategoricalDGP& dgp, const SimSample& sample,
                             double clip, std::vector<std::string>* warnings) {
  Index dropped = 0;
  const SimSample used = trim_to_consecutive_support(sample, &dropped);
  std::vector<std::string> notes;
  if (dropped > 0) {
    notes.push_back("integer support has a gap above " +
                    std::to_string(static_cast<long long>(used.table.t.maxCoeff())) + "; dropped " +
                    std::to_string(dropped) + " rows above it");
  }
  const BinPartition part = make_partition(used.table.t, BinKind::unit_integer, 0);
  const NuisanceFit fit = true_nuisance(dgp, used, part, clip);
  EstimateReport report = aipw_aie(aipw_bin_means(used.table, part, fit), part);
  report.clip = clip;
  report.warnings = notes;
  if (warnings != nullptr) warnings->insert(warnings->end(), notes.begin(), notes.end());
  return report;
}

SimulationResult run_simulation(const PoissonCategoricalDGP& dgp, Index n,
                                const SimulationOptions& options) {
  SimulationResult out;
  out.n = n;
  const SimSample sample = sample_dgp(dgp, n);

  LearnerSpec spec;
  spec.kind = LearnerKind::stratum_mean;
  spec.clip = options.clip;
  spec.seed = options.seed;
  out.empirical_rorr = rorr_pipeline(sample.table, make_folds(n, options.folds, options.seed), spec);

  Eigen::VectorXd deriv(n);
  for (Index i = 0; i < n; ++i) deriv(i) = dgp.f.derivative(sample.table.t(i));
  out.empirical_acd = {deriv.mean(), mean_se(deriv)};
  out.acd_analytic = acd_analytic(dgp);
  out.aie_analytic = aie_analytic(dgp);
  out.empirical_aie = empirical_aie(dgp, sample, options.clip, &out.warnings);
  out.decomposition = bias_decomposition_mc(dgp, options.plim_draws, mix64(options.seed ^ 0x9117));
  out.plim = {out.decomposition.plim, out.decomposition.plim_se};
  return out;
}

}  // namespace rorrlab
