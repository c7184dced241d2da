#ifndef RORRLAB_DIAGNOSTICS_HPP
#define RORRLAB_DIAGNOSTICS_HPP

#include "rorrlab/coarsen.hpp"
#include "rorrlab/dataset.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <vector>

namespace rorrlab {

struct BalanceRow {
  std::string covariate;
  Index bin = 0;
  double smd_pre = 0.0;
  double smd_post = 0.0;
};

struct BalanceReport {
  Index baseline = 0;
  std::string weighting = "normalized inverse propensity 1(T in S_k)/p_k(X)";
  std::vector<BalanceRow> rows;
  // Covariates with zero full-sample sd; no SMD is reported for them.
  std::vector<std::string> flagged;

  double max_abs_pre() const;
  double max_abs_post() const;
};

struct BalanceCovariate {
  std::string name;
  Eigen::VectorXd values;
};

// Numeric covariates as-is and one indicator per level of each categorical
// covariate ("col=level").
std::vector<BalanceCovariate> balance_covariates(const ObservationTable& table);

// SMD_k = (mean_k - mean_baseline) / sd, sd the unweighted full-sample sd.
// Post-weighting means use normalized weights 1(T in S_k) / p_k(X).
BalanceReport balance_report(const ObservationTable& table, const BinPartition& partition,
                             const Eigen::MatrixXd& phat, Index baseline,
                             const std::vector<BalanceCovariate>& covariates);
BalanceReport balance_report(const ObservationTable& table, const BinPartition& partition,
                             const Eigen::MatrixXd& phat, Index baseline = 0);

struct OverlapBin {
  Index bin = 0;
  double min = 0.0;
  double max = 0.0;
  // At probabilities 0.05, 0.25, 0.5, 0.75, 0.95.
  Eigen::VectorXd quantiles;
  Index at_floor = 0;
  double fraction_at_floor = 0.0;
};

struct OverlapReport {
  double clip = 0.0;
  Index n = 0;
  std::vector<OverlapBin> bins;
  std::vector<std::string> warnings;
};

inline const double kOverlapQuantiles[] = {0.05, 0.25, 0.5, 0.75, 0.95};

// `clipped` marks entries where clipping was active; when empty, entries at
// or below the clip floor count instead.
OverlapReport overlap_report(const Eigen::MatrixXd& phat, double clip,
                             const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& clipped);
OverlapReport overlap_report(const Eigen::MatrixXd& phat, double clip);

struct DoseResponseTables {
  Eigen::VectorXd midpoints;
  Eigen::VectorXd psi;
  Eigen::VectorXd psi_se;
  Eigen::VectorXd effects;  // psi_{k+1} - psi_k
  Eigen::VectorXd effect_se;
  Eigen::VectorXd masses;
};

DoseResponseTables dose_response_export(const CounterfactualMeans& means,
                                        const BinPartition& partition);

void write_curve_csv(std::ostream& out, const DoseResponseTables& t);
void write_effects_csv(std::ostream& out, const DoseResponseTables& t);
void write_masses_csv(std::ostream& out, const DoseResponseTables& t);
void write_balance_csv(std::ostream& out, const BalanceReport& report);

}  // namespace rorrlab

#endif
