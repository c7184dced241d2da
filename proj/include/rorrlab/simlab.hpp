#ifndef RORRLAB_SIMLAB_HPP
#define RORRLAB_SIMLAB_HPP

// Poisson-Categorical laboratory: X ~ Categorical(pi), T | X = j ~
// Poisson(lambda_j), Y = f(T) + g_j + e. Provides samplers, closed-form and
// series values of the average causal derivative and incremental effect,
// the mean-value point T*, Monte-Carlo limits of the residuals-on-residuals
// slope and its bias decomposition, and a numeric midpoint-rule check.

#include "rorrlab/coarsen.hpp"
#include "rorrlab/dataset.hpp"
#include "rorrlab/nuisance.hpp"
#include "rorrlab/rng.hpp"
#include "rorrlab/rorr.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace rorrlab {

enum class DoseKind { log1p, affine };

struct DoseFunction {
  DoseKind kind = DoseKind::log1p;
  double intercept = 0.0;  // affine only
  double slope = 1.0;      // affine only

  double value(double t) const;
  double derivative(double t) const;
  // Lipschitz constant of the derivative on t >= 0.
  double lipschitz() const { return kind == DoseKind::log1p ? 1.0 : 0.0; }
  std::string name() const;
};

struct PoissonCategoricalDGP {
  Eigen::VectorXd pi;
  Eigen::VectorXd lambda;
  Eigen::VectorXd g;  // per-stratum outcome offset; empty means zeros
  DoseFunction f;
  double noise_sd = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  Index strata() const { return pi.size(); }
  double offset(Index j) const { return g.size() == 0 ? 0.0 : g(j); }

  // pi = (1/3, 1/3, 1/3), lambda = (1, 3, 9), f = log1p, g = 0, noise sd 1.
  static PoissonCategoricalDGP canonical();
};

// Inversion for lambda <= 10, Hormann's transformed rejection above.
std::int64_t sample_poisson(CounterRng& rng, double lambda);

double poisson_pmf(std::int64_t t, double lambda);

struct SimSample {
  ObservationTable table;  // x_cat column "x" holds the stratum
  Eigen::VectorXi stratum;
  Eigen::VectorXd f_t;     // f(T_i)
};

// Row i uses its own random stream (seed, i), so output does not depend on
// how rows are sharded across threads.
SimSample sample_dgp(const PoissonCategoricalDGP& dgp, Index n);

// Binary treatment version for the strata model: T ~ Bernoulli(h_j),
// Y = theta_j T + offset_j + e.
SimSample sample_binary_strata(const DiscreteStrataModel& model, Index n, std::uint64_t seed,
                               const Eigen::VectorXd& offset, double noise_sd);

// sum_j pi_j (1 - e^{-lambda_j}) / lambda_j for log1p; the slope for affine.
double acd_analytic(const PoissonCategoricalDGP& dgp);

// E[f(T + 1) - f(T)] by truncated Poisson series.
double aie_analytic(const PoissonCategoricalDGP& dgp);

// Mean-value point for log1p: f(t) - f(lambda) = (t - lambda) / (T* + 1).
// Returns t when t == lambda.
double tstar(double t, double lambda);

struct McEstimate {
  double value = 0.0;
  double se = 0.0;
};

// Residuals-on-residuals limit E[(T-lambda)^2 f'(T*)] / E[(T-lambda)^2]
// from stratified draws (round(draws * pi_j) per stratum).
McEstimate rorr_plim_mc(const PoissonCategoricalDGP& dgp, Index draws, std::uint64_t seed);

struct BiasDecomposition {
  double A = 0.0;      // E[w (f'(T*) - f'(T))]
  double A_se = 0.0;
  double B = 0.0;      // Cov(w, f'(T))
  double B_se = 0.0;
  double kappa = 0.0;  // E|T-h|^3 / E(T-h)^2
  double lipschitz = 0.0;
  double lipschitz_bound = 0.0;  // L * kappa
  double acd = 0.0;              // analytic
  double acd_mc = 0.0;           // mean of f'(T) over the same draws
  double acd_mc_se = 0.0;
  double plim = 0.0;
  double plim_se = 0.0;
};

BiasDecomposition bias_decomposition_mc(const PoissonCategoricalDGP& dgp, Index draws,
                                        std::uint64_t seed);

struct MidpointCheck {
  double bin_mean = 0.0;   // integral of f r over the bin
  double midpoint_value = 0.0;
  double error = 0.0;      // bin_mean - midpoint_value
  double abs_error = 0.0;
};

// Compares the density-weighted bin average of f with f at the bin midpoint,
// integrating numerically to `tolerance`.
MidpointCheck midpoint_lemma_check(const std::function<double(double)>& f,
                                   const std::function<double(double)>& density, double lo,
                                   double hi, double tolerance = 1e-10);

// Per-stratum bin probabilities and conditional means under the DGP.
struct BinConditionals {
  Eigen::MatrixXd prob;    // J x K, Pr(T in S_k | j)
  Eigen::MatrixXd f_mean;  // J x K, E[f(T) | T in S_k, j] (0 where prob is 0)
  Eigen::MatrixXd t_mean;  // J x K, E[T | T in S_k, j]
};

BinConditionals bin_conditionals(const PoissonCategoricalDGP& dgp, const BinPartition& partition);

// The data-generating nuisances evaluated at each row: g = E[Y|X],
// h = lambda_j, m_k and clipped p_k.
NuisanceFit true_nuisance(const PoissonCategoricalDGP& dgp, const SimSample& sample,
                          const BinPartition& partition, double clip);

// Observed versus effective (variance-weighted, evaluated at T*) treatment
// masses on a unit grid, for effective-treatment histograms.
struct EffectiveHistogram {
  Eigen::VectorXd t;          // left edge of each unit-width cell
  Eigen::VectorXd observed;   // share of draws with T in the cell
  Eigen::VectorXd effective;  // share of variance weight with T* in the cell
};

EffectiveHistogram effective_histogram(const PoissonCategoricalDGP& dgp, Index draws,
                                       std::uint64_t seed);

struct SimulationOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  Index plim_draws = 1'000'000;
  double clip = 1e-3;
};

struct SimulationResult {
  Index n = 0;
  RorrEstimate empirical_rorr;
  McEstimate empirical_acd;  // mean of f'(T), MC se
  double acd_analytic = 0.0;
  double aie_analytic = 0.0;
  EstimateReport empirical_aie;
  McEstimate plim;
  BiasDecomposition decomposition;
  std::vector<std::string> warnings;
};

// Samples n rows and computes the empirical residuals-on-residuals slope
// (cross-fitted stratum means), the empirical ACD, coarsened AIPW of the
// AIE on unit-integer bins (exact stratum-level nuisances), and the analytic
// and Monte-Carlo references.
SimulationResult run_simulation(const PoissonCategoricalDGP& dgp, Index n,
                                const SimulationOptions& options);

// Coarsened AIPW AIE on unit-integer bins with the DGP's exact nuisances.
// Rows above the first gap in the integer support are dropped (with a
// warning) so the bins are consecutive.
EstimateReport empirical_aie(const PoissonCategoricalDGP& dgp, const SimSample& sample,
                             double clip, std::vector<std::string>* warnings = nullptr);

// Rows of the sample with T at or below the first gap in its integer support.
SimSample trim_to_consecutive_support(const SimSample& sample, Index* dropped = nullptr);

}  // namespace rorrlab

#endif
