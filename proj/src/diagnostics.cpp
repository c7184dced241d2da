#include "rorrlab/diagnostics.hpp"

#include "rorrlab/error.hpp"
#include "rorrlab/format.hpp"
#include "rorrlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace rorrlab {

namespace {

const char* kModule = "diagnostics";

}  // namespace

double BalanceReport::max_abs_pre() const {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, std::abs(r.smd_pre));
  return m;
}

double BalanceReport::max_abs_post() const {
  double m = 0.0;
  for (const auto& r : rows) m = std::max(m, std::abs(r.smd_post));
  return m;
}

std::vector<BalanceCovariate> balance_covariates(const ObservationTable& table) {
  std::vector<BalanceCovariate> out;
  for (Index j = 0; j < table.x_num.cols(); ++j) {
    const std::string name = j < static_cast<Index>(table.num_names.size())
                                 ? table.num_names[static_cast<std::size_t>(j)]
                                 : "x" + std::to_string(j);
    out.push_back({name, table.x_num.col(j)});
  }
  for (Index j = 0; j < table.x_cat.cols(); ++j) {
    const auto sj = static_cast<std::size_t>(j);
    const std::string col = sj < table.cat_names.size() ? table.cat_names[sj] : "c" + std::to_string(j);
    const int levels = table.x_cat.rows() ? table.x_cat.col(j).maxCoeff() + 1 : 0;
    for (int level = 0; level < levels; ++level) {
      const std::string label = sj < table.cat_levels.size() &&
                                        level < static_cast<int>(table.cat_levels[sj].size())
                                    ? table.cat_levels[sj][static_cast<std::size_t>(level)]
                                    : std::to_string(level);
      out.push_back({col + "=" + label, (table.x_cat.col(j).array() == level).cast<double>()});
    }
  }
  return out;
}

BalanceReport balance_report(const ObservationTable& table, const BinPartition& partition,
                             const Eigen::MatrixXd& phat, Index baseline,
                             const std::vector<BalanceCovariate>& covariates) {
  const Index n = table.n();
  const Index k = partition.n_bins();
  if (phat.rows() != n || phat.cols() != k) {
    throw ValidationError(kModule, "propensity matrix must be n x K");
  }
  if (baseline < 0 || baseline >= k) {
    throw ValidationError(kModule, "baseline bin " + std::to_string(baseline) + " out of range");
  }
  const BinLabels labels = partition.labels(table.t);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(k);
  for (Index i = 0; i < n; ++i) count(labels.bin(i)) += 1.0;
  if (count(baseline) == 0.0) {
    throw DataError(kModule, "baseline bin " + std::to_string(baseline) + " is empty");
  }

  BalanceReport report;
  report.baseline = baseline;
  for (const auto& cov : covariates) {
    if (cov.values.size() != n) {
      throw ValidationError(kModule, "covariate '" + cov.name + "' has the wrong length");
    }
    const double sd = sample_sd(cov.values);
    if (!(sd > 0.0) || !std::isfinite(sd)) {
      report.flagged.push_back(cov.name);
      continue;
    }
    Eigen::VectorXd pre_sum = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd post_sum = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd post_w = Eigen::VectorXd::Zero(k);
    for (Index i = 0; i < n; ++i) {
      const int b = labels.bin(i);
      const double w = 1.0 / phat(i, b);
      pre_sum(b) += cov.values(i);
      post_sum(b) += w * cov.values(i);
      post_w(b) += w;
    }
    const double pre_base = pre_sum(baseline) / count(baseline);
    const double post_base = post_sum(baseline) / post_w(baseline);
    for (Index b = 0; b < k; ++b) {
      if (b == baseline || count(b) == 0.0) continue;
      report.rows.push_back({cov.name, b, (pre_sum(b) / count(b) - pre_base) / sd,
                             (post_sum(b) / post_w(b) - post_base) / sd});
    }
  }
  return report;
}

BalanceReport balance_report(const ObservationTable& table, const BinPartition& partition,
                             const Eigen::MatrixXd& phat, Index baseline) {
  return balance_report(table, partition, phat, baseline, balance_covariates(table));
}

OverlapReport overlap_report(const Eigen::MatrixXd& phat, double clip,
                             const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& clipped) {
  const Index n = phat.rows();
  const Index k = phat.cols();
  if (n == 0 || k == 0) throw ValidationError(kModule, "empty propensity matrix");
  const bool use_mask = clipped.size() != 0;
  if (use_mask && (clipped.rows() != n || clipped.cols() != k)) {
    throw ValidationError(kModule, "clip mask does not match the propensity matrix");
  }
  OverlapReport report;
  report.clip = clip;
  report.n = n;
  for (Index b = 0; b < k; ++b) {
    std::vector<double> s(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) s[static_cast<std::size_t>(i)] = phat(i, b);
    std::sort(s.begin(), s.end());
    OverlapBin ob;
    ob.bin = b;
    ob.min = s.front();
    ob.max = s.back();
    ob.quantiles.resize(std::size(kOverlapQuantiles));
    for (std::size_t q = 0; q < std::size(kOverlapQuantiles); ++q) {
      ob.quantiles(static_cast<Index>(q)) = quantile_sorted(s, kOverlapQuantiles[q]);
    }
    ob.at_floor = use_mask ? clipped.col(b).count() : (phat.col(b).array() <= clip).count();
    ob.fraction_at_floor = static_cast<double>(ob.at_floor) / static_cast<double>(n);
    if (ob.fraction_at_floor > 0.01) {
      report.warnings.push_back("bin " + std::to_string(b) + ": " +
                                std::to_string(ob.at_floor) + " of " + std::to_string(n) +
                                " rows at the propensity clip floor");
    }
    report.bins.push_back(std::move(ob));
  }
  return report;
}

OverlapReport overlap_report(const Eigen::MatrixXd& phat, double clip) {
  return overlap_report(phat, clip, {});
}

DoseResponseTables dose_response_export(const CounterfactualMeans& means,
                                        const BinPartition& partition) {
  const Index k = partition.n_bins();
  if (means.psi.size() != k) {
    throw ValidationError(kModule, "counterfactual means do not match the partition");
  }
  DoseResponseTables t;
  t.midpoints = partition.midpoints;
  t.psi = means.psi;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const bool has_influence = means.influence.cols() == k && means.influence.rows() >= 2;
  t.psi_se = means.se.size() == k ? means.se : Eigen::VectorXd::Constant(k, nan);
  t.effects = means.psi.tail(k - 1) - means.psi.head(k - 1);
  t.effect_se = Eigen::VectorXd::Constant(k - 1, nan);
  if (has_influence) {
    for (Index b = 0; b + 1 < k; ++b) {
      t.effect_se(b) = mean_se((means.influence.col(b + 1) - means.influence.col(b)).eval());
    }
  }
  t.masses = partition.masses;
  return t;
}

void write_curve_csv(std::ostream& out, const DoseResponseTables& t) {
  out << "bin,midpoint,psi,se\n";
  for (Index b = 0; b < t.psi.size(); ++b) {
    out << b << ',' << format_double(t.midpoints(b)) << ',' << format_double(t.psi(b)) << ','
        << format_double(t.psi_se(b)) << '\n';
  }
}

void write_effects_csv(std::ostream& out, const DoseResponseTables& t) {
  out << "from_bin,to_bin,effect,se\n";
  for (Index b = 0; b < t.effects.size(); ++b) {
    out << b << ',' << b + 1 << ',' << format_double(t.effects(b)) << ','
        << format_double(t.effect_se(b)) << '\n';
  }
}

void write_masses_csv(std::ostream& out, const DoseResponseTables& t) {
  out << "bin,mass\n";
  for (Index b = 0; b < t.masses.size(); ++b) {
    out << b << ',' << format_double(t.masses(b)) << '\n';
  }
}

void write_balance_csv(std::ostream& out, const BalanceReport& report) {
  out << "covariate,bin,baseline,smd_pre,smd_post\n";
  for (const auto& r : report.rows) {
    const bool quote = r.covariate.find_first_of(",\"") != std::string::npos;
    std::string name = r.covariate;
    if (quote) {
      std::string q = "\"";
      for (char c : name) {
        if (c == '"') q.push_back('"');
        q.push_back(c);
      }
      name = q + "\"";
    }
    out << name << ',' << r.bin << ',' << report.baseline << ',' << format_double(r.smd_pre)
        << ',' << format_double(r.smd_post) << '\n';
  }
}

}  // namespace rorrlab
