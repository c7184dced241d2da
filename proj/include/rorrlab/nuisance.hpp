#ifndef RORRLAB_NUISANCE_HPP
#define RORRLAB_NUISANCE_HPP

#include "rorrlab/dataset.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace rorrlab {

enum class LearnerKind { stratum_mean, boosted_stumps };

std::string to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& name);

struct LearnerSpec {
  LearnerKind kind = LearnerKind::boosted_stumps;
  int rounds = 300;
  double learning_rate = 0.1;
  // Share of each training set held out to choose the number of rounds;
  // 0 disables tuning and uses all `rounds`.
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  // Propensity clip level.
  double clip = 1e-3;
  int min_leaf = 50;
  int max_bins = 255;

  void validate() const;
};

struct Stump {
  Index feature = 0;
  double threshold = 0.0;  // x < threshold goes left
  double left = 0.0;
  double right = 0.0;
};

// Exact per-stratum means keyed by the full covariate row.
struct StratumTable {
  std::map<std::vector<long long>, double> means;
  double global = 0.0;
};

struct StumpEnsemble {
  double base = 0.0;
  std::vector<Stump> stumps;
  // Training MSE after 0, 1, ..., stumps.size() rounds.
  std::vector<double> train_loss;
};

class Predictor {
public:
  explicit Predictor(StratumTable model) : model_(std::move(model)) {}
  explicit Predictor(StumpEnsemble model) : model_(std::move(model)) {}

  double predict_one(const Eigen::RowVectorXd& row, bool* fell_back = nullptr) const;

  // Rows whose stratum was never seen in training get the global mean;
  // their number is added to *fallbacks when given.
  Eigen::VectorXd predict(const Eigen::MatrixXd& features,
                          Index* fallbacks = nullptr) const;

  LearnerKind kind() const;
  // Boosting rounds kept after validation (0 for stratum means).
  int rounds_used() const;
  const std::vector<double>& training_loss() const;

private:
  std::variant<StratumTable, StumpEnsemble> model_;
};

struct StratumFrequencies {
  std::map<std::vector<long long>, Eigen::VectorXd> probs;
  Eigen::VectorXd global;
};

// One boosted logit per class, combined by softmax.
struct SoftmaxStumps {
  Eigen::VectorXd base;
  std::vector<std::vector<Stump>> stumps;  // per round, one stump per class
};

struct ClippedProbabilities {
  Eigen::MatrixXd probs;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clipped;
};

// Clips every entry to [clip, 1 - clip] and renormalizes each row.
ClippedProbabilities clip_and_normalize(const Eigen::MatrixXd& raw, double clip);

// Smallest value clip_and_normalize can produce for K classes.
inline double clip_floor(double clip, Index n_classes) {
  return clip / (1.0 + static_cast<double>(n_classes) * clip);
}

class MulticlassPredictor {
public:
  MulticlassPredictor(StratumFrequencies model, double clip)
      : model_(std::move(model)), clip_(clip) {}
  MulticlassPredictor(SoftmaxStumps model, double clip)
      : model_(std::move(model)), clip_(clip) {}

  Index n_classes() const;
  double clip() const { return clip_; }

  Eigen::MatrixXd predict_raw(const Eigen::MatrixXd& features,
                              Index* fallbacks = nullptr) const;
  ClippedProbabilities predict_proba(const Eigen::MatrixXd& features,
                                     Index* fallbacks = nullptr) const;
  int rounds_used() const;

private:
  std::variant<StratumFrequencies, SoftmaxStumps> model_;
  double clip_;
};

Predictor fit_regression(const Eigen::MatrixXd& features,
                         const Eigen::VectorXd& target, const LearnerSpec& spec);

// Rounds are chosen on the supplied validation data instead of an internal
// split.
Predictor fit_regression(const Eigen::MatrixXd& features,
                         const Eigen::VectorXd& target, const LearnerSpec& spec,
                         const Eigen::MatrixXd& validation_features,
                         const Eigen::VectorXd& validation_target);

MulticlassPredictor fit_multiclass(const Eigen::MatrixXd& features,
                                   const Eigen::VectorXi& labels, Index n_classes,
                                   const LearnerSpec& spec);

MulticlassPredictor fit_multiclass(const Eigen::MatrixXd& features,
                                   const Eigen::VectorXi& labels, Index n_classes,
                                   const LearnerSpec& spec,
                                   const Eigen::MatrixXd& validation_features,
                                   const Eigen::VectorXi& validation_labels);

// Treatment bin of every row, as produced by a BinPartition.
struct BinLabels {
  Eigen::VectorXi bin;
  Index n_bins = 0;
};

struct NuisanceTargets {
  bool g = true;  // E[Y | X]
  bool h = true;  // E[T | X]
  bool m = false; // E[Y | T in S_k, X]
  bool p = false; // Pr(T in S_k | X)
};

enum class NuisanceScheme { cross_fit, in_sample, holdout };
std::string to_string(NuisanceScheme scheme);

struct NuisanceFit {
  NuisanceScheme scheme = NuisanceScheme::cross_fit;
  Eigen::VectorXd ghat;
  Eigen::VectorXd hhat;
  Eigen::MatrixXd mhat;
  Eigen::MatrixXd phat;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> phat_clipped;
  std::optional<FoldAssignment> folds;
  double clip = 0.0;
  std::vector<std::string> warnings;
};

// Out-of-fold predictions: every row is predicted by models trained on the
// other folds only. m_k models see only training rows with T in S_k.
NuisanceFit cross_fit(const ObservationTable& table, const FoldAssignment& folds,
                      const LearnerSpec& spec, const NuisanceTargets& targets,
                      const BinLabels* bins = nullptr);

// Models trained and evaluated on the same rows. Intended for stratum means
// on discrete covariates, where the in-sample fit is the exact plug-in.
NuisanceFit fit_in_sample(const ObservationTable& table, const LearnerSpec& spec,
                          const NuisanceTargets& targets,
                          const BinLabels* bins = nullptr);

struct HoldoutNuisance {
  ObservationTable test;
  BinLabels test_bins;
  NuisanceFit fit;
};

// Fit on the train rows, tune rounds on the validation rows, predict the
// test rows.
HoldoutNuisance fit_holdout(const ObservationTable& table, const HoldoutSplit& split,
                            const LearnerSpec& spec, const NuisanceTargets& targets,
                            const BinLabels* bins = nullptr);

}  // namespace rorrlab

#endif
