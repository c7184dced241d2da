#include "rorrlab/rorr.hpp"

#include "rorrlab/stats.hpp"

#include <cmath>

namespace rorrlab {

namespace {
const char* kModule = "rorr";
}

RorrEstimate ols_slope(const Eigen::VectorXd& y_res, const Eigen::VectorXd& t_res) {
  if (y_res.size() != t_res.size()) {
    throw ValidationError(kModule, "ols_slope: length mismatch");
  }
  const Index n = y_res.size();
  if (n < 2) throw ValidationError(kModule, "ols_slope needs at least 2 rows");
  const Eigen::VectorXd y = centered(y_res);
  const Eigen::VectorXd t = centered(t_res);
  const double stt = t.squaredNorm();
  if (!(stt > 0.0)) {
    throw NumericError(kModule, "degenerate-treatment error: treatment residuals are all zero");
  }
  RorrEstimate est;
  est.n = n;
  est.theta_hat = t.dot(y) / stt;
  const Eigen::VectorXd e = y - est.theta_hat * t;
  const double meat = (t.array().square() * e.array().square()).sum();
  const double hc1 = static_cast<double>(n) / static_cast<double>(n - 1);
  est.se = std::sqrt(hc1 * meat) / stt;
  est.ci95 = ci95(est.theta_hat, est.se);
  return est;
}

RorrEstimate rorr_from_nuisance(const ObservationTable& table, const NuisanceFit& fit) {
  if (fit.ghat.size() != table.n() || fit.hhat.size() != table.n()) {
    throw ValidationError(kModule, "nuisance fit lacks g or h predictions for every row");
  }
  return ols_slope(residualize(table.y, fit.ghat), residualize(table.t, fit.hhat));
}

RorrEstimate rorr_pipeline(const ObservationTable& table, const FoldAssignment& folds,
                           const LearnerSpec& learner) {
  table.validate();
  NuisanceTargets targets;
  targets.g = true;
  targets.h = true;
  return rorr_from_nuisance(table, cross_fit(table, folds, learner, targets));
}

void DiscreteStrataModel::validate() const {
  if (pi.size() == 0 || pi.size() != h.size() || pi.size() != theta.size()) {
    throw ValidationError(kModule, "strata model vectors must be nonempty and equal length");
  }
  if ((pi.array() < 0.0).any() || std::abs(pi.sum() - 1.0) > 1e-9) {
    throw ValidationError(kModule, "stratum probabilities must be nonnegative and sum to 1");
  }
  if ((h.array() < 0.0).any() || (h.array() > 1.0).any()) {
    throw ValidationError(kModule, "treatment probabilities must lie in [0, 1]");
  }
}

namespace {

Eigen::ArrayXd bernoulli_variance(const DiscreteStrataModel& model) {
  return model.h.array() * (1.0 - model.h.array());
}

double total_variance(const DiscreteStrataModel& model) {
  const double v = (model.pi.array() * bernoulli_variance(model)).sum();
  if (!(v > 0.0)) {
    throw NumericError(kModule, "degenerate-treatment error: every stratum has h in {0, 1}");
  }
  return v;
}

}  // namespace

Eigen::VectorXd variance_weights(const DiscreteStrataModel& model) {
  model.validate();
  return bernoulli_variance(model) / total_variance(model);
}

double binary_rorr_plim(const DiscreteStrataModel& model) {
  model.validate();
  const double num = (model.pi.array() * model.theta.array() * bernoulli_variance(model)).sum();
  return num / total_variance(model);
}

double binary_bias(const DiscreteStrataModel& model) {
  return binary_rorr_plim(model) - model.pi.dot(model.theta);
}

double weight_effect_covariance(const DiscreteStrataModel& model) {
  const Eigen::VectorXd w = variance_weights(model);
  const double w_mean = model.pi.dot(w);
  const double theta_mean = model.pi.dot(model.theta);
  return (model.pi.array() * (w.array() - w_mean) * (model.theta.array() - theta_mean)).sum();
}

}  // namespace rorrlab
