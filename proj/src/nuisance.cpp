#include "rorrlab/nuisance.hpp"

#include "rorrlab/error.hpp"
#include "rorrlab/parallel.hpp"
#include "rorrlab/rng.hpp"
#include "rorrlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rorrlab {

namespace {

const char* kModule = "nuisance";

// ---------------------------------------------------------------------------
// Feature binning for the stump search

struct BinnedFeatures {
  std::vector<std::vector<double>> cuts;
  Eigen::MatrixXi bin;  // number of cuts <= x, per row and feature
};

BinnedFeatures bin_features(const Eigen::MatrixXd& x, int max_bins) {
  const Index n = x.rows();
  BinnedFeatures out;
  out.cuts.resize(static_cast<std::size_t>(x.cols()));
  out.bin.resize(n, x.cols());
  std::vector<double> sorted(static_cast<std::size_t>(n));
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < n; ++i) sorted[static_cast<std::size_t>(i)] = x(i, j);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq = sorted;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    auto& cuts = out.cuts[static_cast<std::size_t>(j)];
    if (static_cast<int>(uniq.size()) <= max_bins) {
      for (std::size_t k = 0; k + 1 < uniq.size(); ++k) {
        cuts.push_back(0.5 * (uniq[k] + uniq[k + 1]));
      }
    } else {
      for (int b = 1; b < max_bins; ++b) {
        const auto idx = static_cast<std::size_t>(
            static_cast<long long>(b) * n / max_bins);
        const double lo = sorted[idx - 1];
        auto above = std::upper_bound(uniq.begin(), uniq.end(), lo);
        if (above == uniq.end()) continue;
        cuts.push_back(0.5 * (lo + *above));
      }
      cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    }
    for (Index i = 0; i < n; ++i) {
      out.bin(i, j) = static_cast<int>(
          std::upper_bound(cuts.begin(), cuts.end(), x(i, j)) - cuts.begin());
    }
  }
  return out;
}

struct Split {
  Index feature = 0;
  int bin = 0;  // rows with bin index <= this go left
  double threshold = 0.0;
  double gain = 0.0;
  double left_sum = 0.0;
  double left_count = 0.0;
  double right_sum = 0.0;
  double right_count = 0.0;
};

std::optional<Split> best_split(const BinnedFeatures& bf, const Eigen::VectorXd& r,
                                int min_leaf) {
  const Index n = r.size();
  const double total = r.sum();
  const double ss = r.squaredNorm();
  const double base = total * total / static_cast<double>(n);
  std::optional<Split> best;
  double best_gain = 1e-12 * std::max(ss, std::numeric_limits<double>::min());
  std::vector<double> sums;
  std::vector<Index> counts;
  for (Index j = 0; j < bf.bin.cols(); ++j) {
    const auto& cuts = bf.cuts[static_cast<std::size_t>(j)];
    const std::size_t nb = cuts.size() + 1;
    if (nb < 2) continue;
    sums.assign(nb, 0.0);
    counts.assign(nb, 0);
    const int* col = bf.bin.col(j).data();
    for (Index i = 0; i < n; ++i) {
      sums[static_cast<std::size_t>(col[i])] += r(i);
      ++counts[static_cast<std::size_t>(col[i])];
    }
    double sl = 0.0;
    Index nl = 0;
    for (std::size_t c = 0; c + 1 < nb; ++c) {
      sl += sums[c];
      nl += counts[c];
      const Index nr = n - nl;
      if (nl < min_leaf || nr < min_leaf) continue;
      const double sr = total - sl;
      const double gain = sl * sl / static_cast<double>(nl) +
                          sr * sr / static_cast<double>(nr) - base;
      if (gain > best_gain) {
        best_gain = gain;
        best = Split{j, static_cast<int>(c), cuts[c], gain, sl,
                     static_cast<double>(nl), sr, static_cast<double>(nr)};
      }
    }
  }
  return best;
}

double stump_value(const Stump& s, double x) { return x < s.threshold ? s.left : s.right; }

void add_stump(const Stump& s, const Eigen::MatrixXd& x, Eigen::Ref<Eigen::VectorXd> f) {
  const auto col = x.col(s.feature);
  for (Index i = 0; i < x.rows(); ++i) f(i) += stump_value(s, col(i));
}

// ---------------------------------------------------------------------------
// Regression boosting

struct BoostTrace {
  StumpEnsemble model;
  std::vector<double> validation_loss;  // after 0..rounds rounds
};

BoostTrace boost_regression(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                            const LearnerSpec& spec, int rounds,
                            const Eigen::MatrixXd* xv, const Eigen::VectorXd* yv) {
  const BinnedFeatures bf = bin_features(x, spec.max_bins);
  BoostTrace trace;
  auto& model = trace.model;
  model.base = y.mean();
  Eigen::VectorXd f = Eigen::VectorXd::Constant(y.size(), model.base);
  Eigen::VectorXd r = y - f;
  model.train_loss.push_back(r.squaredNorm() / static_cast<double>(y.size()));
  Eigen::VectorXd fv;
  if (xv != nullptr) {
    fv = Eigen::VectorXd::Constant(xv->rows(), model.base);
    trace.validation_loss.push_back((*yv - fv).squaredNorm() / static_cast<double>(yv->size()));
  }
  for (int round = 0; round < rounds; ++round) {
    const auto split = best_split(bf, r, spec.min_leaf);
    if (!split) break;
    Stump s{split->feature, split->threshold,
            spec.learning_rate * split->left_sum / split->left_count,
            spec.learning_rate * split->right_sum / split->right_count};
    const int* col = bf.bin.col(s.feature).data();
    for (Index i = 0; i < y.size(); ++i) f(i) += col[i] <= split->bin ? s.left : s.right;
    r = y - f;
    model.stumps.push_back(s);
    model.train_loss.push_back(r.squaredNorm() / static_cast<double>(y.size()));
    if (xv != nullptr) {
      add_stump(s, *xv, fv);
      trace.validation_loss.push_back((*yv - fv).squaredNorm() /
                                      static_cast<double>(yv->size()));
    }
  }
  return trace;
}

int argmin_rounds(const std::vector<double>& loss) {
  return static_cast<int>(std::min_element(loss.begin(), loss.end()) - loss.begin());
}

// One-standard-error rule on paired per-row validation losses: the fewest
// rounds whose mean excess loss over the best round is within one se of 0.
// Cursor replays the ensemble on the validation rows: losses() gives the
// per-row loss after the current round, advance() applies the next round.
template <typename MakeCursor>
int one_se_rounds(const std::vector<double>& mean_loss, MakeCursor make_cursor) {
  const int best = argmin_rounds(mean_loss);
  if (best == 0) return 0;
  auto cursor = make_cursor();
  for (int r = 0; r < best; ++r) cursor.advance();
  const Eigen::VectorXd at_best = cursor.losses();
  auto replay = make_cursor();
  for (int r = 0; r < best; ++r) {
    const Eigen::VectorXd d = replay.losses() - at_best;
    const double se = d.size() > 1 ? sample_sd(d) / std::sqrt(static_cast<double>(d.size())) : 0.0;
    if (d.mean() <= se) return r;
    replay.advance();
  }
  return best;
}

struct RegressionCursor {
  const StumpEnsemble* model;
  const Eigen::MatrixXd* x;
  const Eigen::VectorXd* y;
  Eigen::VectorXd f;
  std::size_t round = 0;

  RegressionCursor(const StumpEnsemble& m, const Eigen::MatrixXd& xv, const Eigen::VectorXd& yv)
      : model(&m), x(&xv), y(&yv), f(Eigen::VectorXd::Constant(xv.rows(), m.base)) {}
  Eigen::VectorXd losses() const { return (*y - f).array().square(); }
  void advance() { add_stump(model->stumps[round++], *x, f); }
};

int tuned_rounds(const BoostTrace& trace, const Eigen::MatrixXd& xv, const Eigen::VectorXd& yv) {
  return one_se_rounds(trace.validation_loss,
                       [&] { return RegressionCursor(trace.model, xv, yv); });
}

// Internal fit / validation split of a training set.
std::pair<std::vector<Index>, std::vector<Index>> validation_split(Index n, double fraction,
                                                                   std::uint64_t seed) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  CounterRng rng(seed, 0xA11DA7E);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  const auto n_val = static_cast<Index>(std::llround(fraction * static_cast<double>(n)));
  std::vector<Index> val(perm.begin(), perm.begin() + n_val);
  std::vector<Index> fit(perm.begin() + n_val, perm.end());
  std::sort(val.begin(), val.end());
  std::sort(fit.begin(), fit.end());
  return {fit, val};
}

bool can_tune(Index n, const LearnerSpec& spec) {
  if (!(spec.validation_fraction > 0.0)) return false;
  const auto n_val = static_cast<Index>(std::llround(spec.validation_fraction * static_cast<double>(n)));
  return n_val >= 1 && n - n_val >= 2 * static_cast<Index>(spec.min_leaf);
}

// ---------------------------------------------------------------------------
// Stratum keys

std::vector<long long> stratum_key(const Eigen::MatrixXd& x, Index i) {
  std::vector<long long> key(static_cast<std::size_t>(x.cols()));
  for (Index j = 0; j < x.cols(); ++j) {
    key[static_cast<std::size_t>(j)] = std::llround(x(i, j));
  }
  return key;
}

void require_discrete(const Eigen::MatrixXd& x) {
  for (Index j = 0; j < x.cols(); ++j) {
    for (Index i = 0; i < x.rows(); ++i) {
      if (x(i, j) != std::round(x(i, j))) {
        throw ValidationError(kModule, "stratum_mean requires all-categorical covariates");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Multiclass boosting

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& f) {
  Eigen::MatrixXd p(f.rows(), f.cols());
  for (Index i = 0; i < f.rows(); ++i) {
    const double mx = f.row(i).maxCoeff();
    p.row(i) = (f.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double log_loss(const Eigen::MatrixXd& f, const Eigen::VectorXi& labels) {
  const Eigen::MatrixXd p = softmax_rows(f);
  double loss = 0.0;
  for (Index i = 0; i < f.rows(); ++i) {
    loss -= std::log(std::max(p(i, labels(i)), 1e-300));
  }
  return loss / static_cast<double>(f.rows());
}

struct MulticlassTrace {
  SoftmaxStumps model;
  std::vector<double> validation_loss;
};

MulticlassTrace boost_multiclass(const Eigen::MatrixXd& x, const Eigen::VectorXi& labels,
                                 Index k_classes, const LearnerSpec& spec, int rounds,
                                 const Eigen::MatrixXd* xv, const Eigen::VectorXi* lv) {
  const Index n = x.rows();
  const BinnedFeatures bf = bin_features(x, spec.max_bins);
  MulticlassTrace trace;
  auto& model = trace.model;
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(k_classes);
  for (Index i = 0; i < n; ++i) freq(labels(i)) += 1.0;
  model.base = (freq / static_cast<double>(n)).array().log();
  Eigen::MatrixXd f = model.base.transpose().replicate(n, 1);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, k_classes);
  for (Index i = 0; i < n; ++i) onehot(i, labels(i)) = 1.0;
  Eigen::MatrixXd fv;
  if (xv != nullptr) {
    fv = model.base.transpose().replicate(xv->rows(), 1);
    trace.validation_loss.push_back(log_loss(fv, *lv));
  }
  const double scale = static_cast<double>(k_classes - 1) / static_cast<double>(k_classes);
  for (int round = 0; round < rounds; ++round) {
    const Eigen::MatrixXd p = softmax_rows(f);
    std::vector<Stump> layer;
    bool any = false;
    for (Index k = 0; k < k_classes; ++k) {
      const Eigen::VectorXd grad = onehot.col(k) - p.col(k);
      const auto split = best_split(bf, grad, spec.min_leaf);
      Stump s{0, std::numeric_limits<double>::infinity(), 0.0, 0.0};
      if (split) {
        any = true;
        const int* col = bf.bin.col(split->feature).data();
        double hl = 0.0, hr = 0.0;
        for (Index i = 0; i < n; ++i) {
          const double h = p(i, k) * (1.0 - p(i, k));
          (col[i] <= split->bin ? hl : hr) += h;
        }
        const auto newton = [&](double g, double h) {
          return std::clamp(scale * g / std::max(h, 1e-12), -4.0, 4.0) * spec.learning_rate;
        };
        s = Stump{split->feature, split->threshold, newton(split->left_sum, hl),
                  newton(split->right_sum, hr)};
        for (Index i = 0; i < n; ++i) f(i, k) += col[i] <= split->bin ? s.left : s.right;
      }
      layer.push_back(s);
    }
    if (!any) break;
    if (xv != nullptr) {
      for (Index k = 0; k < k_classes; ++k) {
        add_stump(layer[static_cast<std::size_t>(k)], *xv, fv.col(k));
      }
      trace.validation_loss.push_back(log_loss(fv, *lv));
    }
    model.stumps.push_back(std::move(layer));
  }
  return trace;
}

struct MulticlassCursor {
  const SoftmaxStumps* model;
  const Eigen::MatrixXd* x;
  const Eigen::VectorXi* labels;
  Eigen::MatrixXd f;
  std::size_t round = 0;

  MulticlassCursor(const SoftmaxStumps& m, const Eigen::MatrixXd& xv, const Eigen::VectorXi& lv)
      : model(&m), x(&xv), labels(&lv), f(m.base.transpose().replicate(xv.rows(), 1)) {}
  Eigen::VectorXd losses() const {
    const Eigen::MatrixXd p = softmax_rows(f);
    Eigen::VectorXd out(p.rows());
    for (Index i = 0; i < p.rows(); ++i) out(i) = -std::log(std::max(p(i, (*labels)(i)), 1e-300));
    return out;
  }
  void advance() {
    const auto& layer = model->stumps[round++];
    for (Index k = 0; k < f.cols(); ++k) add_stump(layer[static_cast<std::size_t>(k)], *x, f.col(k));
  }
};

int tuned_rounds(const MulticlassTrace& trace, const Eigen::MatrixXd& xv,
                 const Eigen::VectorXi& lv) {
  return one_se_rounds(trace.validation_loss,
                       [&] { return MulticlassCursor(trace.model, xv, lv); });
}

void require_class_support(const Eigen::VectorXi& labels, Index k_classes) {
  std::vector<Index> counts(static_cast<std::size_t>(k_classes), 0);
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) >= k_classes) {
      throw ValidationError(kModule, "class label out of range: " + std::to_string(labels(i)));
    }
    ++counts[static_cast<std::size_t>(labels(i))];
  }
  for (Index k = 0; k < k_classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0) {
      throw DataError(kModule, "class-support error: class " + std::to_string(k) +
                                   " has no training rows");
    }
  }
}

template <typename T>
T rows_of(const T& m, const std::vector<Index>& rows) {
  return m(rows, Eigen::all);
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(LearnerKind kind) {
  return kind == LearnerKind::stratum_mean ? "stratum_mean" : "boosted_stumps";
}

LearnerKind learner_kind_from_string(const std::string& name) {
  if (name == "stratum_mean") return LearnerKind::stratum_mean;
  if (name == "boosted_stumps") return LearnerKind::boosted_stumps;
  throw ValidationError(kModule, "unknown learner kind '" + name + "'");
}

std::string to_string(NuisanceScheme scheme) {
  switch (scheme) {
    case NuisanceScheme::cross_fit: return "cross_fit";
    case NuisanceScheme::in_sample: return "in_sample";
    case NuisanceScheme::holdout: return "holdout";
  }
  return "unknown";
}

void LearnerSpec::validate() const {
  if (rounds < 1) throw ValidationError(kModule, "learner.rounds must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw ValidationError(kModule, "learner.learning_rate must be in (0, 1]");
  }
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ValidationError(kModule, "learner.validation_fraction must be in [0, 1)");
  }
  if (!(clip > 0.0 && clip < 0.5)) throw ValidationError(kModule, "learner.clip must be in (0, 0.5)");
  if (min_leaf < 1) throw ValidationError(kModule, "learner.min_leaf must be >= 1");
  if (max_bins < 2) throw ValidationError(kModule, "learner.max_bins must be >= 2");
}

double Predictor::predict_one(const Eigen::RowVectorXd& row, bool* fell_back) const {
  if (fell_back != nullptr) *fell_back = false;
  if (const auto* table = std::get_if<StratumTable>(&model_)) {
    std::vector<long long> key(static_cast<std::size_t>(row.size()));
    for (Index j = 0; j < row.size(); ++j) key[static_cast<std::size_t>(j)] = std::llround(row(j));
    auto it = table->means.find(key);
    if (it != table->means.end()) return it->second;
    if (fell_back != nullptr) *fell_back = true;
    return table->global;
  }
  const auto& ens = std::get<StumpEnsemble>(model_);
  double f = ens.base;
  for (const auto& s : ens.stumps) f += stump_value(s, row(s.feature));
  return f;
}

Eigen::VectorXd Predictor::predict(const Eigen::MatrixXd& features, Index* fallbacks) const {
  Eigen::VectorXd out(features.rows());
  if (const auto* table = std::get_if<StratumTable>(&model_)) {
    Index missed = 0;
    for (Index i = 0; i < features.rows(); ++i) {
      auto it = table->means.find(stratum_key(features, i));
      if (it != table->means.end()) {
        out(i) = it->second;
      } else {
        out(i) = table->global;
        ++missed;
      }
    }
    if (fallbacks != nullptr) *fallbacks += missed;
    return out;
  }
  const auto& ens = std::get<StumpEnsemble>(model_);
  out.setConstant(ens.base);
  for (const auto& s : ens.stumps) add_stump(s, features, out);
  return out;
}

LearnerKind Predictor::kind() const {
  return std::holds_alternative<StratumTable>(model_) ? LearnerKind::stratum_mean
                                                      : LearnerKind::boosted_stumps;
}

int Predictor::rounds_used() const {
  if (const auto* ens = std::get_if<StumpEnsemble>(&model_)) {
    return static_cast<int>(ens->stumps.size());
  }
  return 0;
}

const std::vector<double>& Predictor::training_loss() const {
  static const std::vector<double> empty;
  if (const auto* ens = std::get_if<StumpEnsemble>(&model_)) return ens->train_loss;
  return empty;
}

ClippedProbabilities clip_and_normalize(const Eigen::MatrixXd& raw, double clip) {
  ClippedProbabilities out;
  out.clipped = raw.array() < clip;
  out.probs = raw.cwiseMax(clip).cwiseMin(1.0 - clip);
  for (Index i = 0; i < out.probs.rows(); ++i) out.probs.row(i) /= out.probs.row(i).sum();
  return out;
}

Index MulticlassPredictor::n_classes() const {
  if (const auto* freq = std::get_if<StratumFrequencies>(&model_)) return freq->global.size();
  return std::get<SoftmaxStumps>(model_).base.size();
}

Eigen::MatrixXd MulticlassPredictor::predict_raw(const Eigen::MatrixXd& features,
                                                 Index* fallbacks) const {
  const Index k_classes = n_classes();
  if (const auto* freq = std::get_if<StratumFrequencies>(&model_)) {
    Eigen::MatrixXd out(features.rows(), k_classes);
    Index missed = 0;
    for (Index i = 0; i < features.rows(); ++i) {
      auto it = freq->probs.find(stratum_key(features, i));
      if (it != freq->probs.end()) {
        out.row(i) = it->second.transpose();
      } else {
        out.row(i) = freq->global.transpose();
        ++missed;
      }
    }
    if (fallbacks != nullptr) *fallbacks += missed;
    return out;
  }
  const auto& model = std::get<SoftmaxStumps>(model_);
  Eigen::MatrixXd f = model.base.transpose().replicate(features.rows(), 1);
  for (const auto& layer : model.stumps) {
    for (Index k = 0; k < k_classes; ++k) {
      add_stump(layer[static_cast<std::size_t>(k)], features, f.col(k));
    }
  }
  return softmax_rows(f);
}

ClippedProbabilities MulticlassPredictor::predict_proba(const Eigen::MatrixXd& features,
                                                        Index* fallbacks) const {
  return clip_and_normalize(predict_raw(features, fallbacks), clip_);
}

int MulticlassPredictor::rounds_used() const {
  if (const auto* model = std::get_if<SoftmaxStumps>(&model_)) {
    return static_cast<int>(model->stumps.size());
  }
  return 0;
}

// ---------------------------------------------------------------------------

namespace {

Predictor fit_stratum_means(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  require_discrete(x);
  std::map<std::vector<long long>, std::pair<double, Index>> acc;
  for (Index i = 0; i < x.rows(); ++i) {
    auto& a = acc[stratum_key(x, i)];
    a.first += y(i);
    ++a.second;
  }
  StratumTable table;
  table.global = y.mean();
  for (const auto& [key, a] : acc) table.means.emplace(key, a.first / static_cast<double>(a.second));
  return Predictor(std::move(table));
}

}  // namespace

Predictor fit_regression(const Eigen::MatrixXd& features, const Eigen::VectorXd& target,
                         const LearnerSpec& spec) {
  spec.validate();
  if (features.rows() != target.size()) {
    throw ValidationError(kModule, "features and target differ in length");
  }
  if (target.size() < 1) throw ValidationError(kModule, "regression needs at least 1 row");
  if (spec.kind == LearnerKind::stratum_mean) return fit_stratum_means(features, target);
  if (target.size() < 2) throw ValidationError(kModule, "boosting needs at least 2 rows");

  int rounds = spec.rounds;
  if (can_tune(target.size(), spec)) {
    const auto [fit, val] = validation_split(target.size(), spec.validation_fraction, spec.seed);
    const Eigen::MatrixXd xv = rows_of(features, val);
    const Eigen::VectorXd yv = target(val);
    const auto trace = boost_regression(rows_of(features, fit), target(fit), spec,
                                        spec.rounds, &xv, &yv);
    rounds = tuned_rounds(trace, xv, yv);
  }
  return Predictor(boost_regression(features, target, spec, rounds, nullptr, nullptr).model);
}

Predictor fit_regression(const Eigen::MatrixXd& features, const Eigen::VectorXd& target,
                         const LearnerSpec& spec, const Eigen::MatrixXd& validation_features,
                         const Eigen::VectorXd& validation_target) {
  spec.validate();
  if (features.rows() != target.size() || validation_features.rows() != validation_target.size()) {
    throw ValidationError(kModule, "features and target differ in length");
  }
  if (target.size() < 1) throw ValidationError(kModule, "regression needs at least 1 row");
  if (spec.kind == LearnerKind::stratum_mean) return fit_stratum_means(features, target);
  if (target.size() < 2) throw ValidationError(kModule, "boosting needs at least 2 rows");
  auto trace = boost_regression(features, target, spec, spec.rounds, &validation_features,
                                &validation_target);
  const int keep = tuned_rounds(trace, validation_features, validation_target);
  trace.model.stumps.resize(static_cast<std::size_t>(keep));
  trace.model.train_loss.resize(static_cast<std::size_t>(keep) + 1);
  return Predictor(std::move(trace.model));
}

namespace {

MulticlassPredictor fit_stratum_frequencies(const Eigen::MatrixXd& x, const Eigen::VectorXi& labels,
                                            Index k_classes, double clip) {
  require_discrete(x);
  StratumFrequencies model;
  model.global = Eigen::VectorXd::Zero(k_classes);
  std::map<std::vector<long long>, Eigen::VectorXd> counts;
  for (Index i = 0; i < x.rows(); ++i) {
    auto [it, inserted] = counts.try_emplace(stratum_key(x, i), Eigen::VectorXd::Zero(k_classes));
    it->second(labels(i)) += 1.0;
    model.global(labels(i)) += 1.0;
  }
  model.global /= model.global.sum();
  for (auto& [key, c] : counts) model.probs.emplace(key, c / c.sum());
  return MulticlassPredictor(std::move(model), clip);
}

}  // namespace

MulticlassPredictor fit_multiclass(const Eigen::MatrixXd& features, const Eigen::VectorXi& labels,
                                   Index n_classes, const LearnerSpec& spec) {
  spec.validate();
  if (features.rows() != labels.size()) {
    throw ValidationError(kModule, "features and labels differ in length");
  }
  if (n_classes < 2) throw ValidationError(kModule, "multiclass fit needs at least 2 classes");
  require_class_support(labels, n_classes);
  if (spec.kind == LearnerKind::stratum_mean) {
    return fit_stratum_frequencies(features, labels, n_classes, spec.clip);
  }
  int rounds = spec.rounds;
  if (can_tune(labels.size(), spec)) {
    const auto [fit, val] = validation_split(labels.size(), spec.validation_fraction, spec.seed);
    const Eigen::VectorXi lfit = labels(fit);
    bool supported = true;
    for (Index k = 0; k < n_classes; ++k) supported = supported && (lfit.array() == k).any();
    if (supported) {
      const Eigen::MatrixXd xv = rows_of(features, val);
      const Eigen::VectorXi lv = labels(val);
      const auto trace = boost_multiclass(rows_of(features, fit), lfit, n_classes, spec,
                                          spec.rounds, &xv, &lv);
      rounds = tuned_rounds(trace, xv, lv);
    }
  }
  return MulticlassPredictor(
      boost_multiclass(features, labels, n_classes, spec, rounds, nullptr, nullptr).model,
      spec.clip);
}

MulticlassPredictor fit_multiclass(const Eigen::MatrixXd& features, const Eigen::VectorXi& labels,
                                   Index n_classes, const LearnerSpec& spec,
                                   const Eigen::MatrixXd& validation_features,
                                   const Eigen::VectorXi& validation_labels) {
  spec.validate();
  if (n_classes < 2) throw ValidationError(kModule, "multiclass fit needs at least 2 classes");
  require_class_support(labels, n_classes);
  if (spec.kind == LearnerKind::stratum_mean) {
    return fit_stratum_frequencies(features, labels, n_classes, spec.clip);
  }
  auto trace = boost_multiclass(features, labels, n_classes, spec, spec.rounds,
                                &validation_features, &validation_labels);
  trace.model.stumps.resize(
      static_cast<std::size_t>(tuned_rounds(trace, validation_features, validation_labels)));
  return MulticlassPredictor(std::move(trace.model), spec.clip);
}

// ---------------------------------------------------------------------------
// Cross-fitting

namespace {

struct PartPredictions {
  Eigen::VectorXd g, h;
  Eigen::MatrixXd m, p;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clipped;
  std::vector<std::string> warnings;
};

LearnerSpec spec_for(const LearnerSpec& spec, std::uint64_t part, std::uint64_t target) {
  LearnerSpec s = spec;
  s.seed = mix64(spec.seed ^ mix64(part * 0x100 + target));
  return s;
}

void note_fallbacks(std::vector<std::string>& warnings, Index count, const std::string& target,
                    const std::string& where) {
  if (count == 0) return;
  warnings.push_back("stratum fallback: " + std::to_string(count) + " rows (" + target + ", " +
                     where + ") predicted with the training mean");
}

// Trains every requested nuisance on `train` and predicts `predict_rows`.
// When validation rows are given they tune the boosting rounds.
PartPredictions fit_part(const Eigen::MatrixXd& x, const ObservationTable& table,
                         const std::vector<Index>& train, const std::vector<Index>& predict_rows,
                         const std::vector<Index>* validation, const LearnerSpec& spec,
                         const NuisanceTargets& targets, const BinLabels* bins,
                         std::uint64_t part, const std::string& where) {
  PartPredictions out;
  const Eigen::MatrixXd x_train = rows_of(x, train);
  const Eigen::MatrixXd x_pred = rows_of(x, predict_rows);
  Eigen::MatrixXd x_val;
  if (validation != nullptr) x_val = rows_of(x, *validation);

  const auto regress = [&](const Eigen::MatrixXd& xt, const Eigen::VectorXd& yt,
                           const Eigen::MatrixXd* xv, const Eigen::VectorXd* yv,
                           std::uint64_t target) {
    const LearnerSpec s = spec_for(spec, part, target);
    if (xv != nullptr && spec.kind == LearnerKind::boosted_stumps && xv->rows() > 0) {
      return fit_regression(xt, yt, s, *xv, *yv);
    }
    return fit_regression(xt, yt, s);
  };

  if (targets.g) {
    Index missed = 0;
    const Eigen::VectorXd yv = validation ? Eigen::VectorXd(table.y(*validation)) : Eigen::VectorXd();
    out.g = regress(x_train, table.y(train), validation ? &x_val : nullptr,
                    validation ? &yv : nullptr, 1)
                .predict(x_pred, &missed);
    note_fallbacks(out.warnings, missed, "g", where);
  }
  if (targets.h) {
    Index missed = 0;
    const Eigen::VectorXd tv = validation ? Eigen::VectorXd(table.t(*validation)) : Eigen::VectorXd();
    out.h = regress(x_train, table.t(train), validation ? &x_val : nullptr,
                    validation ? &tv : nullptr, 2)
                .predict(x_pred, &missed);
    note_fallbacks(out.warnings, missed, "h", where);
  }
  if (targets.p) {
    const Eigen::VectorXi labels = bins->bin(train);
    for (Index k = 0; k < bins->n_bins; ++k) {
      if (!(labels.array() == static_cast<int>(k)).any()) {
        throw DataError(kModule, "sparse-cell error: " + where + ", bin " + std::to_string(k + 1) +
                                     " has no training rows");
      }
    }
    const LearnerSpec s = spec_for(spec, part, 3);
    Index missed = 0;
    ClippedProbabilities probs;
    if (validation != nullptr && spec.kind == LearnerKind::boosted_stumps) {
      const Eigen::VectorXi lv = bins->bin(*validation);
      probs = fit_multiclass(x_train, labels, bins->n_bins, s, x_val, lv).predict_proba(x_pred, &missed);
    } else {
      probs = fit_multiclass(x_train, labels, bins->n_bins, s).predict_proba(x_pred, &missed);
    }
    out.p = std::move(probs.probs);
    out.clipped = std::move(probs.clipped);
    note_fallbacks(out.warnings, missed, "p", where);
  }
  if (targets.m) {
    out.m.resize(static_cast<Index>(predict_rows.size()), bins->n_bins);
    for (Index k = 0; k < bins->n_bins; ++k) {
      std::vector<Index> in_bin;
      for (Index r : train) {
        if (bins->bin(r) == k) in_bin.push_back(r);
      }
      if (in_bin.empty()) {
        throw DataError(kModule, "sparse-cell error: " + where + ", bin " + std::to_string(k + 1) +
                                     " has no training rows");
      }
      std::vector<Index> val_in_bin;
      if (validation != nullptr) {
        for (Index r : *validation) {
          if (bins->bin(r) == k) val_in_bin.push_back(r);
        }
      }
      const Eigen::MatrixXd xv = rows_of(x, val_in_bin);
      const Eigen::VectorXd yv = table.y(val_in_bin);
      const bool use_val = validation != nullptr && !val_in_bin.empty();
      Index missed = 0;
      out.m.col(k) = regress(rows_of(x, in_bin), table.y(in_bin), use_val ? &xv : nullptr,
                             use_val ? &yv : nullptr, 16 + static_cast<std::uint64_t>(k))
                         .predict(x_pred, &missed);
      note_fallbacks(out.warnings, missed, "m", where + ", bin " + std::to_string(k + 1));
    }
  }
  return out;
}

void check_request(const ObservationTable& table, const LearnerSpec& spec,
                   const NuisanceTargets& targets, const BinLabels* bins) {
  spec.validate();
  if (spec.kind == LearnerKind::stratum_mean && table.x_num.cols() > 0) {
    throw ValidationError(kModule, "stratum_mean requires all-categorical covariates");
  }
  if ((targets.m || targets.p) && bins == nullptr) {
    throw ValidationError(kModule, "bin partition required for m or p nuisances");
  }
  if (bins != nullptr && bins->bin.size() != table.n()) {
    throw ValidationError(kModule, "bin labels do not match table length");
  }
}

NuisanceFit allocate(Index n, const NuisanceTargets& targets, const BinLabels* bins) {
  NuisanceFit fit;
  if (targets.g) fit.ghat.resize(n);
  if (targets.h) fit.hhat.resize(n);
  if (targets.m) fit.mhat.resize(n, bins->n_bins);
  if (targets.p) {
    fit.phat.resize(n, bins->n_bins);
    fit.phat_clipped.resize(n, bins->n_bins);
  }
  return fit;
}

void scatter(NuisanceFit& fit, const PartPredictions& part, const std::vector<Index>& rows,
             const NuisanceTargets& targets) {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Index r = rows[i];
    const auto j = static_cast<Index>(i);
    if (targets.g) fit.ghat(r) = part.g(j);
    if (targets.h) fit.hhat(r) = part.h(j);
    if (targets.m) fit.mhat.row(r) = part.m.row(j);
    if (targets.p) {
      fit.phat.row(r) = part.p.row(j);
      fit.phat_clipped.row(r) = part.clipped.row(j);
    }
  }
  fit.warnings.insert(fit.warnings.end(), part.warnings.begin(), part.warnings.end());
}

}  // namespace

NuisanceFit cross_fit(const ObservationTable& table, const FoldAssignment& folds,
                      const LearnerSpec& spec, const NuisanceTargets& targets,
                      const BinLabels* bins) {
  check_request(table, spec, targets, bins);
  if (static_cast<Index>(folds.fold_of.size()) != table.n()) {
    throw ValidationError(kModule, "fold assignment does not match table length");
  }
  const Eigen::MatrixXd x = table.features();
  auto parts = parallel_map(static_cast<std::size_t>(folds.n_folds), [&](std::size_t f) {
    const int fold = static_cast<int>(f);
    return fit_part(x, table, folds.rows_outside(fold), folds.rows_in(fold), nullptr, spec,
                    targets, bins, f, "fold " + std::to_string(fold + 1));
  });
  NuisanceFit fit = allocate(table.n(), targets, bins);
  fit.scheme = NuisanceScheme::cross_fit;
  fit.folds = folds;
  fit.clip = spec.clip;
  for (int f = 0; f < folds.n_folds; ++f) {
    scatter(fit, parts[static_cast<std::size_t>(f)], folds.rows_in(f), targets);
  }
  return fit;
}

NuisanceFit fit_in_sample(const ObservationTable& table, const LearnerSpec& spec,
                          const NuisanceTargets& targets, const BinLabels* bins) {
  check_request(table, spec, targets, bins);
  const Eigen::MatrixXd x = table.features();
  std::vector<Index> all(static_cast<std::size_t>(table.n()));
  std::iota(all.begin(), all.end(), Index{0});
  const auto part = fit_part(x, table, all, all, nullptr, spec, targets, bins, 0, "in-sample");
  NuisanceFit fit = allocate(table.n(), targets, bins);
  fit.scheme = NuisanceScheme::in_sample;
  fit.clip = spec.clip;
  scatter(fit, part, all, targets);
  return fit;
}

HoldoutNuisance fit_holdout(const ObservationTable& table, const HoldoutSplit& split,
                            const LearnerSpec& spec, const NuisanceTargets& targets,
                            const BinLabels* bins) {
  check_request(table, spec, targets, bins);
  const Eigen::MatrixXd x = table.features();
  const auto part = fit_part(x, table, split.train, split.test, &split.validation, spec, targets,
                             bins, 0, "holdout train");
  HoldoutNuisance out;
  out.test = table.subset(split.test);
  if (bins != nullptr) {
    out.test_bins.bin = bins->bin(split.test);
    out.test_bins.n_bins = bins->n_bins;
  }
  const auto n_test = static_cast<Index>(split.test.size());
  out.fit = allocate(n_test, targets, bins);
  out.fit.scheme = NuisanceScheme::holdout;
  out.fit.clip = spec.clip;
  std::vector<Index> local(split.test.size());
  std::iota(local.begin(), local.end(), Index{0});
  scatter(out.fit, part, local, targets);
  return out;
}

}  // namespace rorrlab
