#ifndef RORRLAB_RORR_HPP
#define RORRLAB_RORR_HPP

#include "rorrlab/dataset.hpp"
#include "rorrlab/error.hpp"
#include "rorrlab/nuisance.hpp"

#include <Eigen/Dense>

#include <utility>

namespace rorrlab {

struct RorrEstimate {
  double theta_hat = 0.0;
  double se = 0.0;  // HC1
  std::pair<double, double> ci95{0.0, 0.0};
  Index n = 0;
};

// values - predictions, re-centered to mean zero.
template <typename DerivedA, typename DerivedB>
Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> residualize(
    const Eigen::MatrixBase<DerivedA>& values, const Eigen::MatrixBase<DerivedB>& predictions) {
  if (values.size() != predictions.size()) {
    throw ValidationError("rorr", "residualize: length mismatch (" +
                                      std::to_string(values.size()) + " vs " +
                                      std::to_string(predictions.size()) + ")");
  }
  Eigen::Matrix<typename DerivedA::Scalar, Eigen::Dynamic, 1> r = values - predictions;
  r.array() -= r.mean();
  return r;
}

// No-intercept slope of y_res on t_res after centering both, with the HC1
// sandwich standard error. Centering makes this equal to the with-intercept
// OLS slope on the raw inputs.
RorrEstimate ols_slope(const Eigen::VectorXd& y_res, const Eigen::VectorXd& t_res);

// Residualizes with precomputed nuisances (ghat, hhat) and regresses.
RorrEstimate rorr_from_nuisance(const ObservationTable& table, const NuisanceFit& fit);

// Cross-fits E[Y|X] and E[T|X], residualizes and regresses.
RorrEstimate rorr_pipeline(const ObservationTable& table, const FoldAssignment& folds,
                           const LearnerSpec& learner);

// Discrete covariate strata with a binary treatment.
struct DiscreteStrataModel {
  Eigen::VectorXd pi;     // stratum probabilities
  Eigen::VectorXd h;      // Pr(T = 1 | stratum)
  Eigen::VectorXd theta;  // E[theta_i | stratum]

  void validate() const;
};

// Conditional-variance weights h_j(1-h_j) / sum_j pi_j h_j(1-h_j); they
// average to one under pi.
Eigen::VectorXd variance_weights(const DiscreteStrataModel& model);

// Probability limit of the residuals-on-residuals slope:
// sum pi_j theta_j h_j(1-h_j) / sum pi_j h_j(1-h_j).
double binary_rorr_plim(const DiscreteStrataModel& model);

// binary_rorr_plim minus the average effect sum pi_j theta_j.
double binary_bias(const DiscreteStrataModel& model);

// Cov(omega, theta) under pi, computed from the weights directly.
double weight_effect_covariance(const DiscreteStrataModel& model);

}  // namespace rorrlab

#endif
