#include "rorrlab/coarsen.hpp"

#include "rorrlab/error.hpp"
#include "rorrlab/rorr.hpp"
#include "rorrlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace rorrlab {

namespace {

const char* kModule = "coarsen";

// Linear-interpolation sample quantile of sorted data.
std::vector<double> sorted_copy(const Eigen::VectorXd& t) {
  std::vector<double> s(t.data(), t.data() + t.size());
  std::sort(s.begin(), s.end());
  return s;
}

// Drops repeated edges; records a warning when bins were lost.
std::vector<double> merge_edges(std::vector<double> edges, Index requested,
                                std::vector<std::string>& warnings) {
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  const auto k = static_cast<Index>(edges.size()) - 1;
  if (k < requested) {
    warnings.push_back("duplicate quantile edges merged: K reduced from " +
                       std::to_string(requested) + " to " + std::to_string(k));
  }
  if (k < 2) {
    throw DataError(kModule, "partition error: fewer than 2 bins remain after merging "
                             "duplicate quantile edges");
  }
  return edges;
}

void finalize(BinPartition& part, const Eigen::VectorXd& t) {
  const Index k = part.edges.size() - 1;
  if (part.midpoints.size() != k) {
    part.midpoints = 0.5 * (part.edges.head(k) + part.edges.tail(k));
  }
  part.lengths = part.edges.tail(k) - part.edges.head(k);
  const BinLabels labels = part.labels(t);
  part.masses = Eigen::VectorXd::Zero(k);
  for (Index i = 0; i < t.size(); ++i) part.masses(labels.bin(i)) += 1.0;
  for (Index b = 0; b < k; ++b) {
    if (part.masses(b) == 0.0) {
      std::ostringstream msg;
      msg << "partition error: bin " << (b + 1) << " [" << part.edges(b) << ", "
          << part.edges(b + 1) << ") is empty";
      throw DataError(kModule, msg.str());
    }
  }
  part.masses /= static_cast<double>(t.size());
  part.weights = part.masses / (1.0 - part.masses(k - 1));
  part.weights(k - 1) = 0.0;
}

}  // namespace

std::string to_string(BinKind kind) {
  switch (kind) {
    case BinKind::equal_width: return "equal_width";
    case BinKind::quantile: return "quantile";
    case BinKind::zero_plus_quantiles: return "zero_plus_quantiles";
    case BinKind::unit_integer: return "unit_integer";
  }
  return "unknown";
}

BinKind bin_kind_from_string(const std::string& name) {
  if (name == "equal_width") return BinKind::equal_width;
  if (name == "quantile") return BinKind::quantile;
  if (name == "zero_plus_quantiles") return BinKind::zero_plus_quantiles;
  if (name == "unit_integer") return BinKind::unit_integer;
  throw ValidationError(kModule, "unknown bin strategy '" + name + "'");
}

std::string to_string(Estimand e) {
  switch (e) {
    case Estimand::rorr: return "RORR";
    case Estimand::coarsened_rorr: return "CoarsenedRORR";
    case Estimand::aipw_acd: return "AIPW_ACD";
    case Estimand::aipw_aie: return "AIPW_AIE";
  }
  return "unknown";
}

int BinPartition::bin_of(double t) const {
  const Index k = edges.size() - 1;
  if (!(t >= edges(0) && t <= edges(k))) {
    std::ostringstream msg;
    msg << "partition error: treatment value " << t << " outside [" << edges(0) << ", "
        << edges(k) << "]";
    throw DataError(kModule, msg.str());
  }
  const double* first = edges.data() + 1;
  const double* last = edges.data() + k;
  return static_cast<int>(std::upper_bound(first, last, t) - first);
}

BinLabels BinPartition::labels(const Eigen::VectorXd& t) const {
  BinLabels out;
  out.n_bins = edges.size() - 1;
  out.bin.resize(t.size());
  for (Index i = 0; i < t.size(); ++i) out.bin(i) = bin_of(t(i));
  return out;
}

BinPartition make_partition(const Eigen::VectorXd& t, BinKind kind, Index k) {
  if (t.size() < 2) throw ValidationError(kModule, "partition needs at least 2 treatment values");
  if (!t.allFinite()) throw DataError(kModule, "partition error: non-finite treatment value");
  if (kind != BinKind::unit_integer && k < 2) {
    throw ValidationError(kModule, "number of bins must be at least 2");
  }
  BinPartition part;
  part.kind = kind;
  part.requested_bins = k;
  const std::vector<double> s = sorted_copy(t);
  const double lo = s.front();
  const double hi = s.back();
  std::vector<double> edges;

  switch (kind) {
    case BinKind::equal_width: {
      if (!(hi > lo)) throw DataError(kModule, "partition error: treatment is constant");
      for (Index b = 0; b <= k; ++b) {
        edges.push_back(b == k ? hi : lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(k));
      }
      break;
    }
    case BinKind::quantile: {
      edges.push_back(lo);
      for (Index b = 1; b < k; ++b) {
        edges.push_back(quantile_sorted(s, static_cast<double>(b) / static_cast<double>(k)));
      }
      edges.push_back(hi);
      edges = merge_edges(std::move(edges), k, part.warnings);
      break;
    }
    case BinKind::zero_plus_quantiles: {
      if (lo < 0.0) {
        throw ValidationError(kModule, "zero_plus_quantiles requires nonnegative treatment");
      }
      if (lo != 0.0) throw DataError(kModule, "partition error: treatment has no zeros");
      std::vector<double> pos(std::upper_bound(s.begin(), s.end(), 0.0), s.end());
      std::vector<double> distinct = pos;
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      if (static_cast<Index>(distinct.size()) < k - 1) {
        throw DataError(kModule, "partition error: need at least " + std::to_string(k - 1) +
                                     " distinct positive treatment values");
      }
      std::vector<double> pos_edges{pos.front()};
      for (Index b = 1; b < k - 1; ++b) {
        pos_edges.push_back(
            quantile_sorted(pos, static_cast<double>(b) / static_cast<double>(k - 1)));
      }
      pos_edges.push_back(pos.back());
      pos_edges.erase(std::unique(pos_edges.begin(), pos_edges.end()), pos_edges.end());
      if (static_cast<Index>(pos_edges.size()) < k) {
        part.warnings.push_back("duplicate quantile edges merged: K reduced from " +
                                std::to_string(k) + " to " +
                                std::to_string(pos_edges.size()));
      }
      if (pos_edges.size() < 2) {
        throw DataError(kModule, "partition error: positive values cannot be split");
      }
      edges.push_back(0.0);
      edges.insert(edges.end(), pos_edges.begin(), pos_edges.end());
      part.edges = Eigen::Map<const Eigen::VectorXd>(edges.data(), static_cast<Index>(edges.size()));
      const Index kk = part.edges.size() - 1;
      part.midpoints = 0.5 * (part.edges.head(kk) + part.edges.tail(kk));
      part.midpoints(0) = 0.0;
      finalize(part, t);
      return part;
    }
    case BinKind::unit_integer: {
      for (double v : s) {
        if (v != std::round(v)) {
          throw ValidationError(kModule, "unit_integer bins require integer-valued treatment");
        }
      }
      std::vector<double> values = s;
      values.erase(std::unique(values.begin(), values.end()), values.end());
      if (values.size() < 2) throw DataError(kModule, "partition error: treatment is constant");
      edges.push_back(values.front() - 0.5);
      for (std::size_t b = 0; b + 1 < values.size(); ++b) {
        edges.push_back(0.5 * (values[b] + values[b + 1]));
      }
      edges.push_back(values.back() + 0.5);
      part.requested_bins = static_cast<Index>(values.size());
      part.edges = Eigen::Map<const Eigen::VectorXd>(edges.data(), static_cast<Index>(edges.size()));
      part.midpoints = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
      finalize(part, t);
      return part;
    }
  }
  part.edges = Eigen::Map<const Eigen::VectorXd>(edges.data(), static_cast<Index>(edges.size()));
  finalize(part, t);
  return part;
}

Index choose_k(Index n, double d) {
  if (n < 2) throw ValidationError(kModule, "choose_k needs n >= 2");
  if (!(d > 0.0)) throw ValidationError(kModule, "choose_k needs d > 0");
  double exponent = 1.0 / 7.0;
  if (d < 2.0) {
    exponent = 1.0 / 6.0;
  } else if (d > 2.0) {
    exponent = 1.0 / (3.0 * d + 1.0);
  }
  const auto k = static_cast<Index>(std::llround(std::pow(static_cast<double>(n), exponent)));
  return std::max<Index>(2, k);
}

// ---------------------------------------------------------------------------

EstimateReport coarsened_rorr(const ObservationTable& table, const BinPartition& partition,
                              const Eigen::VectorXd& ghat, const Eigen::MatrixXd& phat) {
  const Index n = table.n();
  const Index k = partition.n_bins();
  if (k < 2) throw ValidationError(kModule, "coarsened RORR needs at least 2 bins");
  if (ghat.size() != n || phat.rows() != n || phat.cols() != k) {
    throw ValidationError(kModule, "coarsened RORR: nuisance shapes do not match the table");
  }
  const BinLabels labels = partition.labels(table.t);
  const Eigen::VectorXd y = residualize(table.y, ghat);
  const Index p = k - 1;
  Eigen::MatrixXd d(n, p);
  for (Index j = 0; j < p; ++j) {
    for (Index i = 0; i < n; ++i) {
      d(i, j) = (labels.bin(i) == j + 1 ? 1.0 : 0.0) - phat(i, j + 1);
    }
    d.col(j).array() -= d.col(j).mean();
  }
  if (n <= p) throw NumericError(kModule, "rank error: fewer rows than coefficients");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) {
    throw NumericError(kModule, "rank error: residualized bin indicators are collinear (rank " +
                                    std::to_string(qr.rank()) + " of " + std::to_string(p) + ")");
  }
  const Eigen::VectorXd beta = qr.solve(y);
  const Eigen::VectorXd e = y - d * beta;
  const Eigen::MatrixXd bread = (d.transpose() * d).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd meat = d.transpose() * e.array().square().matrix().asDiagonal() * d;
  const double hc1 = static_cast<double>(n) / static_cast<double>(n - p);
  const Eigen::MatrixXd cov = hc1 * bread * meat * bread;
  const Eigen::VectorXd w = partition.weights.head(p);

  EstimateReport report;
  report.estimand = Estimand::coarsened_rorr;
  report.n = n;
  report.partition = partition;
  report.coefficients = beta;
  report.coefficient_se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  report.estimate = w.dot(beta);
  report.se = std::sqrt(std::max(0.0, w.dot(cov * w)));
  report.ci95 = ci95(report.estimate, report.se);
  return report;
}

EstimateReport coarsened_rorr(const ObservationTable& table, const BinPartition& partition,
                              const NuisanceFit& fit) {
  EstimateReport report = coarsened_rorr(table, partition, fit.ghat, fit.phat);
  report.clip = fit.clip;
  return report;
}

BinaryCutPlim coarsened_rorr_binary_plim(const BinaryCutStrata& strata) {
  const Index j = strata.pi.size();
  if (j == 0 || strata.p2.size() != j || strata.f_upper.size() != j ||
      strata.f_lower.size() != j) {
    throw ValidationError(kModule, "binary-cut strata vectors must be nonempty and equal length");
  }
  const Eigen::ArrayXd v = strata.p2.array() * (1.0 - strata.p2.array());
  const double norm = (strata.pi.array() * v).sum();
  if (!(norm > 0.0)) {
    throw NumericError(kModule, "degeneracy error: every stratum has p2 in {0, 1}");
  }
  BinaryCutPlim out;
  out.upsilon = v / norm;
  out.contrast = strata.f_upper - strata.f_lower;
  out.beta2 = (strata.pi.array() * out.upsilon.array() * out.contrast.array()).sum();
  if (strata.t_upper.size() == j && strata.t_lower.size() == j) {
    out.delta = strata.t_upper - strata.t_lower;
  }
  return out;
}

CounterfactualMeans aipw_bin_means(const ObservationTable& table, const BinPartition& partition,
                                   const Eigen::MatrixXd& phat, const Eigen::MatrixXd& mhat,
                                   double clip) {
  const Index n = table.n();
  const Index k = partition.n_bins();
  if (phat.rows() != n || phat.cols() != k || mhat.rows() != n || mhat.cols() != k) {
    throw ValidationError(kModule, "AIPW: nuisance shapes do not match the table and partition");
  }
  const double floor = clip_floor(clip, k) * (1.0 - 1e-12);
  if (!phat.allFinite() || phat.minCoeff() < floor) {
    throw ValidationError(kModule, "internal invariant violation: propensity below the clip "
                                   "floor; clip and renormalize upstream");
  }
  if (!mhat.allFinite()) throw ValidationError(kModule, "AIPW: non-finite outcome predictions");
  const BinLabels labels = partition.labels(table.t);
  CounterfactualMeans out;
  out.influence = mhat;
  for (Index i = 0; i < n; ++i) {
    const int b = labels.bin(i);
    out.influence(i, b) += (table.y(i) - mhat(i, b)) / phat(i, b);
  }
  out.psi = out.influence.colwise().mean().transpose();
  out.se.resize(k);
  for (Index b = 0; b < k; ++b) out.se(b) = mean_se(out.influence.col(b));
  return out;
}

CounterfactualMeans aipw_bin_means(const ObservationTable& table, const BinPartition& partition,
                                   const NuisanceFit& fit) {
  return aipw_bin_means(table, partition, fit.phat, fit.mhat, fit.clip);
}

namespace {

// Shared aggregation over adjacent-bin differences scaled by 1/step_k.
EstimateReport aggregate_differences(const CounterfactualMeans& means,
                                     const BinPartition& partition, const Eigen::VectorXd& step,
                                     Estimand estimand) {
  const Index k = partition.n_bins();
  if (means.psi.size() != k) {
    throw ValidationError(kModule, "counterfactual means do not match the partition");
  }
  const Eigen::VectorXd w = partition.weights.head(k - 1);
  EstimateReport report;
  report.estimand = estimand;
  report.partition = partition;
  report.bin_means = means.psi;
  report.bin_effects = means.psi.tail(k - 1) - means.psi.head(k - 1);
  report.estimate = (w.array() * report.bin_effects.array() / step.array()).sum();

  const bool has_influence = means.influence.cols() == k && means.influence.rows() >= 2;
  if (has_influence) {
    const Index n = means.influence.rows();
    report.n = n;
    report.bin_mean_se = means.se;
    const Eigen::MatrixXd diffs =
        means.influence.rightCols(k - 1) - means.influence.leftCols(k - 1);
    report.bin_effect_se.resize(k - 1);
    for (Index b = 0; b < k - 1; ++b) report.bin_effect_se(b) = mean_se(diffs.col(b));
    const Eigen::VectorXd unit = diffs * (w.array() / step.array()).matrix();
    report.se = mean_se(unit);
  } else {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    report.se = nan;
    report.bin_mean_se = Eigen::VectorXd::Constant(k, nan);
    report.bin_effect_se = Eigen::VectorXd::Constant(k - 1, nan);
  }
  report.ci95 = ci95(report.estimate, report.se);
  return report;
}

}  // namespace

EstimateReport aipw_acd(const CounterfactualMeans& means, const BinPartition& partition) {
  const Index k = partition.n_bins();
  if (k < 2) throw ValidationError(kModule, "AIPW ACD needs at least 2 bins");
  const Eigen::VectorXd step = partition.midpoints.tail(k - 1) - partition.midpoints.head(k - 1);
  if ((step.array() <= 0.0).any()) {
    throw NumericError(kModule, "division error: adjacent bin midpoints are not increasing");
  }
  return aggregate_differences(means, partition, step, Estimand::aipw_acd);
}

EstimateReport aipw_aie(const CounterfactualMeans& means, const BinPartition& partition) {
  if (partition.kind != BinKind::unit_integer) {
    throw ValidationError(kModule, "AIE requires a unit_integer partition");
  }
  const Index k = partition.n_bins();
  if (k < 2) throw ValidationError(kModule, "AIE needs at least 2 bins");
  std::vector<long long> missing;
  for (Index b = 0; b + 1 < k; ++b) {
    const auto a = std::llround(partition.midpoints(b));
    const auto c = std::llround(partition.midpoints(b + 1));
    for (long long v = a + 1; v < c; ++v) missing.push_back(v);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) {
      list += (i ? ", " : "") + std::to_string(missing[i]);
    }
    if (missing.size() > 20) list += ", ...";
    throw DataError(kModule, "gap error: treatment support is missing integer values " + list);
  }
  return aggregate_differences(means, partition, Eigen::VectorXd::Ones(k - 1), Estimand::aipw_aie);
}

}  // namespace rorrlab
