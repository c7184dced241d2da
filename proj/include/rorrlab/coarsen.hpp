#ifndef RORRLAB_COARSEN_HPP
#define RORRLAB_COARSEN_HPP

#include "rorrlab/dataset.hpp"
#include "rorrlab/nuisance.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace rorrlab {

enum class BinKind { equal_width, quantile, zero_plus_quantiles, unit_integer };

std::string to_string(BinKind kind);
BinKind bin_kind_from_string(const std::string& name);

// Treatment bins S_k = [edge_k, edge_{k+1}); the last bin is closed.
//
// For zero_plus_quantiles the first bin holds exactly the zeros, so its
// midpoint is 0 rather than the edge midpoint. For unit_integer there is one
// bin per observed integer v with midpoint v; edges sit halfway between
// consecutive observed values (v_1 - 1/2 and v_K + 1/2 at the ends).
struct BinPartition {
  BinKind kind = BinKind::equal_width;
  Index requested_bins = 0;
  Eigen::VectorXd edges;
  Eigen::VectorXd midpoints;
  Eigen::VectorXd lengths;
  Eigen::VectorXd masses;   // empirical Pr(T in S_k)
  Eigen::VectorXd weights;  // masses_k / (1 - masses_K), last entry 0
  std::vector<std::string> warnings;

  Index n_bins() const { return midpoints.size(); }

  // Bin index in 0..K-1; DataError when t lies outside [edges_0, edges_K].
  int bin_of(double t) const;
  BinLabels labels(const Eigen::VectorXd& t) const;
};

BinPartition make_partition(const Eigen::VectorXd& t, BinKind kind, Index k);

// Number of bins balancing midpoint bias against variance. d is the rate
// exponent of the bin means (n^{-1/d} consistency); d = 2 gives n^{1/7}.
Index choose_k(Index n, double d = 2.0);

enum class Estimand { rorr, coarsened_rorr, aipw_acd, aipw_aie };
std::string to_string(Estimand e);

struct CounterfactualMeans {
  Eigen::VectorXd psi;
  Eigen::MatrixXd influence;  // n x K, psi_k = column mean
  Eigen::VectorXd se;
};

struct EstimateReport {
  Estimand estimand = Estimand::rorr;
  double estimate = 0.0;
  double se = 0.0;
  std::pair<double, double> ci95{0.0, 0.0};
  Index n = 0;
  double clip = 0.0;
  std::optional<BinPartition> partition;
  // Coarsened RORR: coefficients on the residualized indicators of bins 2..K.
  Eigen::VectorXd coefficients;
  Eigen::VectorXd coefficient_se;
  // AIPW: per-bin means and the k -> k+1 differences psi_{k+1} - psi_k.
  Eigen::VectorXd bin_means;
  Eigen::VectorXd bin_mean_se;
  Eigen::VectorXd bin_effects;
  Eigen::VectorXd bin_effect_se;
  std::vector<std::string> warnings;
};

// Multivariate OLS of the centered outcome residual on the centered
// residualized indicators D_k - p_k for k = 2..K, aggregated as
// sum_{k<K} w_k beta_{k+1} with delta-method HC1 standard error.
EstimateReport coarsened_rorr(const ObservationTable& table, const BinPartition& partition,
                              const Eigen::VectorXd& ghat, const Eigen::MatrixXd& phat);
EstimateReport coarsened_rorr(const ObservationTable& table, const BinPartition& partition,
                              const NuisanceFit& fit);

struct BinaryCutStrata {
  Eigen::VectorXd pi;       // stratum probabilities
  Eigen::VectorXd p2;       // Pr(T >= c | stratum)
  Eigen::VectorXd f_upper;  // E[f(T) | T >= c, stratum]
  Eigen::VectorXd f_lower;  // E[f(T) | T < c, stratum]
  // Optional E[T | T >= c, stratum] and E[T | T < c, stratum] for the
  // distance-from-cutoff diagnostic.
  Eigen::VectorXd t_upper;
  Eigen::VectorXd t_lower;
};

struct BinaryCutPlim {
  double beta2 = 0.0;
  Eigen::VectorXd upsilon;   // p2(1-p2) / E[p2(1-p2)]
  Eigen::VectorXd contrast;  // f_upper - f_lower
  Eigen::VectorXd delta;     // t_upper - t_lower, empty when not supplied
};

// Limit of the K = 2 coarsened slope: E[upsilon * contrast].
BinaryCutPlim coarsened_rorr_binary_plim(const BinaryCutStrata& strata);

// AIPW counterfactual bin means with per-unit influence values
// 1(T in S_k)/p_k (Y - m_k) + m_k.
CounterfactualMeans aipw_bin_means(const ObservationTable& table, const BinPartition& partition,
                                   const Eigen::MatrixXd& phat, const Eigen::MatrixXd& mhat,
                                   double clip);
CounterfactualMeans aipw_bin_means(const ObservationTable& table, const BinPartition& partition,
                                   const NuisanceFit& fit);

// sum_{k<K} w_k (psi_{k+1} - psi_k) / (midpoint_{k+1} - midpoint_k).
EstimateReport aipw_acd(const CounterfactualMeans& means, const BinPartition& partition);

// sum_{k<K} w_k (psi_{k+1} - psi_k) over consecutive integer bins.
EstimateReport aipw_aie(const CounterfactualMeans& means, const BinPartition& partition);

}  // namespace rorrlab

#endif
