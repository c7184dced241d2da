#include "rorrlab/cli.hpp"

#include "rorrlab/coarsen.hpp"
#include "rorrlab/dataset.hpp"
#include "rorrlab/diagnostics.hpp"
#include "rorrlab/error.hpp"
#include "rorrlab/format.hpp"
#include "rorrlab/nuisance.hpp"
#include "rorrlab/rorr.hpp"
#include "rorrlab/simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

namespace rorrlab::cli {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

const char* kModule = "cli";

enum class ValueType { text, integer, unsigned_integer, real, text_list, real_list };

enum Command : unsigned { kSimulate = 1, kEstimate = 2, kDiagnose = 4 };

struct KeySpec {
  const char* key;
  const char* flag;
  ValueType type;
  unsigned commands;
  const char* help;
};

// Config keys and the flags that set them.
const KeySpec kKeys[] = {
    {"input", "--input", ValueType::text, kEstimate | kDiagnose, "input CSV"},
    {"out", "--out", ValueType::text, kSimulate | kEstimate | kDiagnose, "output path(s)"},
    {"seed", "--seed", ValueType::unsigned_integer, kSimulate | kEstimate | kDiagnose, "seed"},
    {"folds", "--folds", ValueType::integer, kSimulate | kEstimate | kDiagnose, "cross-fitting folds"},
    {"bins", "--bins", ValueType::integer, kEstimate | kDiagnose, "number of treatment bins"},
    {"bin_strategy", "--bin-strategy", ValueType::text, kEstimate | kDiagnose,
     "equal_width|quantile|zero_plus_quantiles|unit_integer"},
    {"learner.clip", "--clip", ValueType::real, kSimulate | kEstimate | kDiagnose, "propensity clip"},
    {"learner.kind", "--learner", ValueType::text, kEstimate | kDiagnose,
     "stratum_mean|boosted_stumps"},
    {"learner.rounds", "--rounds", ValueType::integer, kEstimate | kDiagnose, "boosting rounds"},
    {"learner.learning_rate", "--learning-rate", ValueType::real, kEstimate | kDiagnose,
     "boosting learning rate"},
    {"learner.validation_fraction", "--validation-fraction", ValueType::real,
     kEstimate | kDiagnose, "share held out to choose rounds"},
    {"learner.min_leaf", "--min-leaf", ValueType::integer, kEstimate | kDiagnose, "minimum leaf size"},
    {"learner.max_bins", "--max-bins", ValueType::integer, kEstimate | kDiagnose,
     "histogram bins per feature"},
    {"standardize", "--standardize", ValueType::text_list, kEstimate | kDiagnose,
     "columns to standardize"},
    {"y_col", "--y-col", ValueType::text, kEstimate | kDiagnose, "outcome column"},
    {"t_col", "--t-col", ValueType::text, kEstimate | kDiagnose, "treatment column"},
    {"x_cols", "--x-cols", ValueType::text_list, kEstimate | kDiagnose, "numeric covariates"},
    {"cat_cols", "--cat-cols", ValueType::text_list, kEstimate | kDiagnose,
     "categorical covariates"},
    {"estimand", "--estimand", ValueType::text, kEstimate, "acd|aie (aipw only)"},
    {"nuisance", "--nuisance", ValueType::text, kEstimate | kDiagnose,
     "cross_fit|in_sample|holdout"},
    {"holdout.validation_fraction", "--holdout-validation", ValueType::real,
     kEstimate | kDiagnose, "holdout validation share"},
    {"holdout.test_fraction", "--holdout-test", ValueType::real, kEstimate | kDiagnose,
     "holdout test share"},
    {"curve_out", "--curve-out", ValueType::text, kEstimate, "prefix for dose-response CSVs"},
    {"baseline", "--baseline", ValueType::integer, kDiagnose, "baseline bin (0-based)"},
    {"n", "--n", ValueType::integer, kSimulate, "sample size"},
    {"histogram_out", "--histogram-out", ValueType::text, kSimulate,
     "effective-treatment histogram CSV"},
    {"sim.pi", "--pi", ValueType::real_list, kSimulate, "stratum probabilities"},
    {"sim.lambda", "--lambda", ValueType::real_list, kSimulate, "Poisson means"},
    {"sim.g", "--g", ValueType::real_list, kSimulate, "stratum outcome offsets"},
    {"sim.f", "--dose", ValueType::text, kSimulate, "log1p|affine"},
    {"sim.intercept", "--intercept", ValueType::real, kSimulate, "affine intercept"},
    {"sim.slope", "--slope", ValueType::real, kSimulate, "affine slope"},
    {"sim.noise_sd", "--noise-sd", ValueType::real, kSimulate, "outcome noise sd"},
    {"sim.plim_draws", "--plim-draws", ValueType::integer, kSimulate, "Monte-Carlo draws"},
    {"sim.histogram_draws", "--histogram-draws", ValueType::integer, kSimulate,
     "draws for the histogram"},
};

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : kKeys) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    const auto a = cur.find_first_not_of(" \t");
    const auto b = cur.find_last_not_of(" \t");
    if (a != std::string::npos) out.push_back(cur.substr(a, b - a + 1));
  }
  return out;
}

double parse_real(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw ValidationError(kModule, "config key '" + key + "' expects a number, got '" + s + "'");
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw ValidationError(kModule, "config key '" + key + "' expects an integer, got '" + s + "'");
  }
  return v;
}

// Converts a flag string or a config-file value into the canonical JSON type.
Json coerce(const KeySpec& spec, const Json& v) {
  const std::string key = spec.key;
  auto bad = [&]() {
    return ValidationError(kModule, "config key '" + key + "' has the wrong type: " + v.dump());
  };
  switch (spec.type) {
    case ValueType::text:
      if (!v.is_string()) throw bad();
      return v;
    case ValueType::integer:
    case ValueType::unsigned_integer: {
      long long x = 0;
      if (v.is_string()) {
        x = parse_integer(key, v.get<std::string>());
      } else if (v.is_number_integer()) {
        x = v.get<long long>();
      } else if (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>()) {
        x = static_cast<long long>(v.get<double>());
      } else {
        throw bad();
      }
      if (spec.type == ValueType::unsigned_integer) {
        if (x < 0) throw ValidationError(kModule, "config key '" + key + "' must be >= 0");
        return Json(static_cast<std::uint64_t>(x));
      }
      return Json(x);
    }
    case ValueType::real:
      if (v.is_string()) return Json(parse_real(key, v.get<std::string>()));
      if (!v.is_number()) throw bad();
      return Json(v.get<double>());
    case ValueType::text_list: {
      Json arr = Json::array();
      if (v.is_string()) {
        for (auto& s : split_list(v.get<std::string>())) arr.push_back(s);
      } else if (v.is_array()) {
        for (const auto& e : v) {
          if (!e.is_string()) throw bad();
          arr.push_back(e);
        }
      } else {
        throw bad();
      }
      return arr;
    }
    case ValueType::real_list: {
      Json arr = Json::array();
      if (v.is_string()) {
        for (auto& s : split_list(v.get<std::string>())) arr.push_back(parse_real(key, s));
      } else if (v.is_array()) {
        for (const auto& e : v) {
          if (!e.is_number()) throw bad();
          arr.push_back(e.get<double>());
        }
      } else {
        throw bad();
      }
      return arr;
    }
  }
  throw bad();
}

void flatten(const Json& j, const std::string& prefix, std::map<std::string, Json>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out[key] = *it;
    }
  }
}

class Config {
 public:
  Config(unsigned command, std::map<std::string, Json> values)
      : command_(command), values_(std::move(values)) {}

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const Json& raw(const std::string& key) const { return values_.at(key); }

  std::string text(const std::string& key, const std::string& fallback) {
    return get(key, Json(fallback)).get<std::string>();
  }
  long long integer(const std::string& key, long long fallback) {
    return get(key, Json(fallback)).get<long long>();
  }
  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    return get(key, Json(fallback)).get<std::uint64_t>();
  }
  double real(const std::string& key, double fallback) {
    return get(key, Json(fallback)).get<double>();
  }
  std::vector<std::string> texts(const std::string& key) {
    return get(key, Json::array()).get<std::vector<std::string>>();
  }
  Eigen::VectorXd reals(const std::string& key, const Eigen::VectorXd& fallback) {
    Json def = Json::array();
    for (Index i = 0; i < fallback.size(); ++i) def.push_back(fallback(i));
    const auto v = get(key, def).get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
  }
  // Records a value computed during the run (for example a data-dependent
  // default) so it appears in the resolved config.
  void set(const std::string& key, Json v) { values_[key] = std::move(v); }

  Json resolved() const {
    Json j = Json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  unsigned command() const { return command_; }

 private:
  const Json& get(const std::string& key, const Json& fallback) {
    const KeySpec* spec = find_key(key);
    if (spec == nullptr) throw ValidationError(kModule, "internal: unregistered key " + key);
    auto it = values_.find(key);
    if (it == values_.end()) it = values_.emplace(key, coerce(*spec, fallback)).first;
    return it->second;
  }

  unsigned command_;
  std::map<std::string, Json> values_;
};

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Json vec_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i))) {
      a.push_back(v(i));
    } else {
      a.push_back(nullptr);
    }
  }
  return a;
}

Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json learner_json(const LearnerSpec& s) {
  Json j = Json::object();
  j["kind"] = to_string(s.kind);
  j["rounds"] = s.rounds;
  j["learning_rate"] = s.learning_rate;
  j["validation_fraction"] = s.validation_fraction;
  j["min_leaf"] = s.min_leaf;
  j["max_bins"] = s.max_bins;
  j["clip"] = s.clip;
  j["seed"] = s.seed;
  return j;
}

Json partition_json(const BinPartition& p) {
  Json j = Json::object();
  j["kind"] = to_string(p.kind);
  j["K"] = p.n_bins();
  j["requested_bins"] = p.requested_bins;
  j["edges"] = vec_json(p.edges);
  j["midpoints"] = vec_json(p.midpoints);
  j["lengths"] = vec_json(p.lengths);
  j["masses"] = vec_json(p.masses);
  j["weights"] = vec_json(p.weights);
  return j;
}

Json standardization_json(const StandardizationSpec& s) {
  Json j = Json::object();
  j["enabled"] = s.enabled;
  j["columns"] = s.columns;
  j["means"] = s.means;
  j["sds"] = s.sds;
  return j;
}

void append_warnings(Json& report, const std::vector<std::string>& w) {
  for (const auto& s : w) report["warnings"].push_back(s);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(kModule, "cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw DataError(kModule, "write failed for '" + path.string() + "'");
}

void check_output_path(const std::string& path) {
  if (path.empty()) return;
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw ValidationError(kModule, "output directory '" + parent.string() + "' does not exist");
  }
}

LearnerSpec learner_from(Config& c, std::uint64_t seed, double clip) {
  LearnerSpec s;
  s.kind = learner_kind_from_string(c.text("learner.kind", to_string(s.kind)));
  s.rounds = static_cast<int>(c.integer("learner.rounds", s.rounds));
  s.learning_rate = c.real("learner.learning_rate", s.learning_rate);
  s.validation_fraction = c.real("learner.validation_fraction", s.validation_fraction);
  s.min_leaf = static_cast<int>(c.integer("learner.min_leaf", s.min_leaf));
  s.max_bins = static_cast<int>(c.integer("learner.max_bins", s.max_bins));
  s.seed = seed;
  s.clip = clip;
  s.validate();
  return s;
}

NuisanceScheme scheme_from(const std::string& s) {
  if (s == "cross_fit") return NuisanceScheme::cross_fit;
  if (s == "in_sample") return NuisanceScheme::in_sample;
  if (s == "holdout") return NuisanceScheme::holdout;
  throw ValidationError(kModule, "nuisance must be cross_fit, in_sample or holdout, got '" + s + "'");
}

struct Loaded {
  ObservationTable table;
  StandardizationSpec standardization;
};

Loaded load_input(Config& c) {
  if (!c.has("input")) throw ValidationError(kModule, "--input is required");
  const std::string input = c.text("input", "");
  if (!fs::is_regular_file(input)) {
    throw ValidationError(kModule, "input file '" + input + "' does not exist");
  }
  ColumnRoles roles;
  roles.y = c.text("y_col", "y");
  roles.t = c.text("t_col", "t");
  roles.x_num = c.texts("x_cols");
  roles.x_cat = c.texts("cat_cols");
  Loaded l;
  l.table = load_csv(input, roles);
  const auto cols = c.texts("standardize");
  if (!cols.empty()) {
    auto [tab, spec] = standardize(l.table, cols);
    l.table = std::move(tab);
    l.standardization = std::move(spec);
  }
  return l;
}

// Rows, bin labels and nuisances that an estimator sees after the chosen
// fitting scheme.
struct Fitted {
  ObservationTable table;
  NuisanceFit fit;
};

Fitted fit_nuisances(Config& c, const ObservationTable& table, const LearnerSpec& spec,
                     const NuisanceTargets& targets, const BinLabels* bins, std::uint64_t seed,
                     Json& meta) {
  const NuisanceScheme scheme = scheme_from(c.text("nuisance", "cross_fit"));
  meta["scheme"] = to_string(scheme);
  Fitted out;
  switch (scheme) {
    case NuisanceScheme::cross_fit: {
      const int folds = static_cast<int>(c.integer("folds", 5));
      meta["folds"] = folds;
      out.table = table;
      out.fit = cross_fit(table, make_folds(table.n(), folds, seed), spec, targets, bins);
      break;
    }
    case NuisanceScheme::in_sample:
      out.table = table;
      out.fit = fit_in_sample(table, spec, targets, bins);
      break;
    case NuisanceScheme::holdout: {
      const double vf = c.real("holdout.validation_fraction", 0.2);
      const double tf = c.real("holdout.test_fraction", 0.3);
      meta["validation_fraction"] = vf;
      meta["test_fraction"] = tf;
      auto h = fit_holdout(table, make_holdout_split(table.n(), vf, tf, seed), spec, targets, bins);
      out.table = std::move(h.test);
      out.fit = std::move(h.fit);
      break;
    }
  }
  meta["n_estimation"] = out.table.n();
  return out;
}

BinPartition partition_from(Config& c, const Eigen::VectorXd& t, BinKind default_kind) {
  const BinKind kind = bin_kind_from_string(c.text("bin_strategy", to_string(default_kind)));
  Index k = 0;
  if (kind != BinKind::unit_integer) {
    k = static_cast<Index>(c.integer("bins", static_cast<long long>(choose_k(t.size()))));
    if (k < 2) throw ValidationError(kModule, "bins must be >= 2");
  }
  return make_partition(t, kind, k);
}

Json header(const std::string& subcommand, const std::string& estimator,
            const std::string& estimand) {
  Json j = Json::object();
  j["tool"] = "rorrlab";
  j["subcommand"] = subcommand;
  j["estimator"] = estimator;
  j["estimand"] = estimand;
  return j;
}

void finish(Json& report, const Config& c, std::uint64_t seed) {
  const Json resolved = c.resolved();
  report["seed"] = seed;
  report["config"] = resolved;
  report["config_hash"] = fnv1a_hex(resolved.dump());
  if (!report.contains("warnings")) report["warnings"] = Json::array();
  report["generated_at"] = timestamp_utc();
}

void emit(const Json& report, const std::string& path, std::ostream& out) {
  const std::string text = report.dump(2) + "\n";
  if (path.empty()) {
    out << text;
  } else {
    write_text(path, text);
  }
}

Json estimate_json(double est, double se, const std::pair<double, double>& ci) {
  Json j = Json::object();
  j["estimate"] = num(est);
  j["se"] = num(se);
  j["ci95"] = Json::array({num(ci.first), num(ci.second)});
  return j;
}

int run_estimate(Config& c, const std::string& estimator, std::ostream& out) {
  const std::uint64_t seed = c.u64("seed", 0);
  const double clip = c.real("learner.clip", 1e-3);
  const std::string out_path = c.text("out", "");
  check_output_path(out_path);
  std::string estimand_flag;
  if (estimator == "aipw") {
    estimand_flag = c.text("estimand", "acd");
    if (estimand_flag != "acd" && estimand_flag != "aie") {
      throw ValidationError(kModule, "estimand must be acd or aie, got '" + estimand_flag + "'");
    }
    if (estimand_flag == "aie" && c.has("bin_strategy") &&
        c.raw("bin_strategy").get<std::string>() != "unit_integer") {
      throw ValidationError(kModule, "estimand=aie requires bin_strategy=unit_integer");
    }
  } else if (c.has("estimand")) {
    throw ValidationError(kModule, "--estimand applies to the aipw estimator only");
  }
  const std::string curve_out = c.text("curve_out", "");
  if (!curve_out.empty()) check_output_path(curve_out + "_curve.csv");

  const LearnerSpec spec = learner_from(c, seed, clip);
  Loaded data = load_input(c);
  const ObservationTable& table = data.table;

  Json report;
  Json nuisance_meta = Json::object();
  std::vector<std::string> warnings;
  std::optional<BinPartition> partition;
  Json result;
  Json payload = Json::object();

  if (estimator == "rorr") {
    report = header("estimate", "rorr", to_string(Estimand::rorr));
    const Fitted f = fit_nuisances(c, table, spec, NuisanceTargets{true, true, false, false},
                                   nullptr, seed, nuisance_meta);
    const RorrEstimate r = rorr_from_nuisance(f.table, f.fit);
    result = estimate_json(r.theta_hat, r.se, r.ci95);
    warnings = f.fit.warnings;
  } else {
    const bool aie = estimand_flag == "aie";
    partition = partition_from(c, table.t, aie ? BinKind::unit_integer : BinKind::quantile);
    const BinLabels labels = partition->labels(table.t);
    if (estimator == "coarsened-rorr") {
      report = header("estimate", "coarsened_rorr", to_string(Estimand::coarsened_rorr));
      const Fitted f = fit_nuisances(c, table, spec, NuisanceTargets{true, false, false, true},
                                     &labels, seed, nuisance_meta);
      const EstimateReport r = coarsened_rorr(f.table, *partition, f.fit);
      result = estimate_json(r.estimate, r.se, r.ci95);
      payload["coefficients"] = vec_json(r.coefficients);
      payload["coefficient_se"] = vec_json(r.coefficient_se);
      warnings = f.fit.warnings;
      warnings.insert(warnings.end(), r.warnings.begin(), r.warnings.end());
    } else {
      report = header("estimate", "aipw", to_string(aie ? Estimand::aipw_aie : Estimand::aipw_acd));
      const Fitted f = fit_nuisances(c, table, spec, NuisanceTargets{false, false, true, true},
                                     &labels, seed, nuisance_meta);
      const CounterfactualMeans means = aipw_bin_means(f.table, *partition, f.fit);
      const EstimateReport r = aie ? aipw_aie(means, *partition) : aipw_acd(means, *partition);
      result = estimate_json(r.estimate, r.se, r.ci95);
      const DoseResponseTables t = dose_response_export(means, *partition);
      Json curve = Json::array();
      for (Index b = 0; b < t.psi.size(); ++b) {
        curve.push_back({{"bin", b}, {"midpoint", t.midpoints(b)}, {"mass", t.masses(b)},
                         {"psi", num(t.psi(b))}, {"se", num(t.psi_se(b))}});
      }
      Json effects = Json::array();
      for (Index b = 0; b < t.effects.size(); ++b) {
        effects.push_back({{"from_bin", b}, {"to_bin", b + 1}, {"effect", num(t.effects(b))},
                           {"se", num(t.effect_se(b))}});
      }
      payload["bins"] = curve;
      payload["effects"] = effects;
      if (!curve_out.empty()) {
        std::ostringstream a, b, m;
        write_curve_csv(a, t);
        write_effects_csv(b, t);
        write_masses_csv(m, t);
        write_text(curve_out + "_curve.csv", a.str());
        write_text(curve_out + "_effects.csv", b.str());
        write_text(curve_out + "_masses.csv", m.str());
      }
      const OverlapReport ov = overlap_report(f.fit.phat, clip, f.fit.phat_clipped);
      warnings = f.fit.warnings;
      warnings.insert(warnings.end(), ov.warnings.begin(), ov.warnings.end());
    }
    warnings.insert(warnings.begin(), partition->warnings.begin(), partition->warnings.end());
  }

  report["n"] = table.n();
  report["K"] = partition ? Json(partition->n_bins()) : Json(nullptr);
  report["clip"] = clip;
  report["learner"] = learner_json(spec);
  report["nuisance"] = nuisance_meta;
  report["result"] = result;
  report["partition"] = partition ? partition_json(*partition) : Json(nullptr);
  for (auto it = payload.begin(); it != payload.end(); ++it) report[it.key()] = it.value();
  report["standardization"] = standardization_json(data.standardization);
  report["warnings"] = Json::array();
  append_warnings(report, warnings);
  finish(report, c, seed);
  emit(report, out_path, out);
  return 0;
}

int run_diagnose(Config& c, std::ostream& out) {
  const std::uint64_t seed = c.u64("seed", 0);
  const double clip = c.real("learner.clip", 1e-3);
  const auto outs = split_list(c.text("out", ""));
  if (outs.size() > 2) throw ValidationError(kModule, "--out takes balance.csv,overlap.json");
  const std::string balance_path = outs.size() > 0 ? outs[0] : "";
  const std::string overlap_path = outs.size() > 1 ? outs[1] : "";
  check_output_path(balance_path);
  check_output_path(overlap_path);
  const LearnerSpec spec = learner_from(c, seed, clip);
  Loaded data = load_input(c);
  const BinPartition partition = partition_from(c, data.table.t, BinKind::quantile);
  const BinLabels labels = partition.labels(data.table.t);
  Json meta = Json::object();
  const Fitted f = fit_nuisances(c, data.table, spec, NuisanceTargets{false, false, false, true},
                                 &labels, seed, meta);
  const Index baseline = static_cast<Index>(c.integer("baseline", 0));
  const BalanceReport balance = balance_report(f.table, partition, f.fit.phat, baseline);
  const OverlapReport overlap = overlap_report(f.fit.phat, clip, f.fit.phat_clipped);

  Json report = header("diagnose", "aipw", "overlap_balance");
  report["n"] = data.table.n();
  report["K"] = partition.n_bins();
  report["clip"] = clip;
  report["learner"] = learner_json(spec);
  report["nuisance"] = meta;
  report["partition"] = partition_json(partition);
  Json bins = Json::array();
  for (const auto& b : overlap.bins) {
    Json q = Json::object();
    for (std::size_t i = 0; i < std::size(kOverlapQuantiles); ++i) {
      std::ostringstream label;
      label << 'q' << std::setw(2) << std::setfill('0')
            << static_cast<int>(std::lround(kOverlapQuantiles[i] * 100));
      q[label.str()] = b.quantiles(static_cast<Index>(i));
    }
    bins.push_back({{"bin", b.bin}, {"min", b.min}, {"max", b.max}, {"quantiles", q},
                    {"at_floor", b.at_floor}, {"fraction_at_floor", b.fraction_at_floor}});
  }
  report["overlap"] = bins;
  Json bal = Json::object();
  bal["baseline"] = balance.baseline;
  bal["weighting"] = balance.weighting;
  bal["max_abs_smd_pre"] = balance.max_abs_pre();
  bal["max_abs_smd_post"] = balance.max_abs_post();
  bal["flagged"] = balance.flagged;
  report["balance"] = bal;
  report["standardization"] = standardization_json(data.standardization);
  report["warnings"] = Json::array();
  append_warnings(report, partition.warnings);
  append_warnings(report, f.fit.warnings);
  for (const auto& name : balance.flagged) {
    report["warnings"].push_back("covariate '" + name + "' has zero sd; SMD omitted");
  }
  append_warnings(report, overlap.warnings);
  finish(report, c, seed);

  std::ostringstream csv;
  write_balance_csv(csv, balance);
  if (balance_path.empty()) {
    out << csv.str();
  } else {
    write_text(balance_path, csv.str());
  }
  emit(report, overlap_path, out);
  return 0;
}

int run_simulate(Config& c, std::ostream& out) {
  const std::uint64_t seed = c.u64("seed", 0);
  const std::string out_path = c.text("out", "");
  const std::string hist_path = c.text("histogram_out", "");
  check_output_path(out_path);
  check_output_path(hist_path);
  PoissonCategoricalDGP dgp = PoissonCategoricalDGP::canonical();
  dgp.pi = c.reals("sim.pi", dgp.pi);
  dgp.lambda = c.reals("sim.lambda", dgp.lambda);
  dgp.g = c.reals("sim.g", Eigen::VectorXd::Zero(dgp.pi.size()));
  const std::string dose = c.text("sim.f", "log1p");
  if (dose == "log1p") {
    dgp.f.kind = DoseKind::log1p;
  } else if (dose == "affine") {
    dgp.f.kind = DoseKind::affine;
    dgp.f.intercept = c.real("sim.intercept", 0.0);
    dgp.f.slope = c.real("sim.slope", 1.0);
  } else {
    throw ValidationError(kModule, "sim.f must be log1p or affine, got '" + dose + "'");
  }
  dgp.noise_sd = c.real("sim.noise_sd", 1.0);
  dgp.seed = seed;
  dgp.validate();
  const Index n = static_cast<Index>(c.integer("n", 100000));
  if (n < 10) throw ValidationError(kModule, "n must be >= 10");
  SimulationOptions opts;
  opts.folds = static_cast<int>(c.integer("folds", opts.folds));
  opts.seed = seed;
  opts.clip = c.real("learner.clip", opts.clip);
  opts.plim_draws = static_cast<Index>(c.integer("sim.plim_draws", opts.plim_draws));
  if (opts.plim_draws < 10000) throw ValidationError(kModule, "sim.plim_draws must be >= 10000");
  if (!(opts.clip > 0.0 && opts.clip < 0.5)) throw ValidationError(kModule, "clip must be in (0, 0.5)");

  const SimulationResult r = run_simulation(dgp, n, opts);

  LearnerSpec spec;
  spec.kind = LearnerKind::stratum_mean;
  spec.seed = seed;
  spec.clip = opts.clip;

  Json report = header("simulate", "rorr+aipw", to_string(Estimand::rorr) + "," +
                                                    to_string(Estimand::aipw_aie));
  report["n"] = n;
  report["K"] = r.empirical_aie.partition ? Json(r.empirical_aie.partition->n_bins()) : Json(nullptr);
  report["clip"] = opts.clip;
  report["learner"] = learner_json(spec);
  Json d = Json::object();
  d["pi"] = vec_json(dgp.pi);
  d["lambda"] = vec_json(dgp.lambda);
  d["g"] = vec_json(dgp.g);
  d["f"] = dgp.f.name();
  if (dgp.f.kind == DoseKind::affine) {
    d["intercept"] = dgp.f.intercept;
    d["slope"] = dgp.f.slope;
  }
  d["noise_sd"] = dgp.noise_sd;
  report["dgp"] = d;
  Json res = Json::object();
  res["empirical_rorr"] = estimate_json(r.empirical_rorr.theta_hat, r.empirical_rorr.se,
                                        r.empirical_rorr.ci95);
  res["empirical_acd"] = {{"estimate", r.empirical_acd.value}, {"se", r.empirical_acd.se}};
  res["acd_analytic"] = r.acd_analytic;
  res["aie_analytic"] = r.aie_analytic;
  res["empirical_aie"] = estimate_json(r.empirical_aie.estimate, r.empirical_aie.se,
                                       r.empirical_aie.ci95);
  res["plim_mc"] = {{"estimate", r.plim.value}, {"se", r.plim.se}, {"draws", opts.plim_draws}};
  const BiasDecomposition& b = r.decomposition;
  res["bias_decomposition"] = {
      {"A", b.A},         {"A_se", b.A_se},       {"B", b.B},
      {"B_se", b.B_se},   {"kappa", b.kappa},     {"lipschitz", b.lipschitz},
      {"lipschitz_bound", b.lipschitz_bound},     {"acd", b.acd},
      {"acd_mc", b.acd_mc}, {"acd_mc_se", b.acd_mc_se}, {"plim", b.plim},
      {"plim_se", b.plim_se}};
  report["result"] = res;
  report["warnings"] = Json::array();
  append_warnings(report, r.warnings);

  if (!hist_path.empty()) {
    const Index draws = static_cast<Index>(c.integer("sim.histogram_draws", 1'000'000));
    const EffectiveHistogram h = effective_histogram(dgp, draws, mix64(seed ^ 0x4157));
    std::ostringstream csv;
    csv << "t,observed,effective\n";
    for (Index i = 0; i < h.t.size(); ++i) {
      csv << static_cast<long long>(h.t(i)) << ',' << format_double(h.observed(i)) << ','
          << format_double(h.effective(i)) << '\n';
    }
    write_text(hist_path, csv.str());
  }
  finish(report, c, seed);
  emit(report, out_path, out);
  return 0;
}

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residuals-on-residuals and coarsened AIPW estimators"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  struct Sub {
    CLI::App* app;
    unsigned command;
    std::string config_path;
    std::map<std::string, std::string> flags;
  };
  std::vector<Sub> subs;
  subs.reserve(3);
  subs.push_back({app.add_subcommand("simulate", "Poisson-Categorical simulation"), kSimulate, {}, {}});
  subs.push_back({app.add_subcommand("estimate", "estimate rorr|coarsened-rorr|aipw"), kEstimate, {}, {}});
  subs.push_back({app.add_subcommand("diagnose", "overlap and balance diagnostics"), kDiagnose, {}, {}});
  std::string estimator;
  subs[1].app->add_option("estimator", estimator, "rorr, coarsened-rorr or aipw")
      ->required()
      ->check(CLI::IsMember({"rorr", "coarsened-rorr", "aipw"}));
  for (auto& s : subs) {
    s.app->add_option("--config", s.config_path, "JSON config with flat dotted keys");
    for (const auto& k : kKeys) {
      if ((k.commands & s.command) == 0) continue;
      s.app->add_option(k.flag, s.flags[k.key], k.help);
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error [" << kModule << "]: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::validation);
  }

  try {
    Sub* active = nullptr;
    for (auto& s : subs) {
      if (s.app->parsed()) active = &s;
    }
    std::map<std::string, Json> values;
    if (!active->config_path.empty()) {
      std::ifstream f(active->config_path);
      if (!f) {
        throw ValidationError(kModule, "config file '" + active->config_path + "' does not exist");
      }
      Json j;
      try {
        j = Json::parse(f);
      } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(kModule, std::string("config file is not valid JSON: ") + e.what());
      }
      if (!j.is_object()) throw ValidationError(kModule, "config file must hold a JSON object");
      std::map<std::string, Json> flat;
      flatten(j, "", flat);
      for (auto& [key, v] : flat) {
        const KeySpec* spec = find_key(key);
        if (spec == nullptr || (spec->commands & active->command) == 0) {
          throw ValidationError(kModule, "unknown config key '" + key + "'");
        }
        values[key] = coerce(*spec, v);
      }
    }
    for (const auto& k : kKeys) {
      if ((k.commands & active->command) == 0) continue;
      auto* opt = active->app->get_option_no_throw(k.flag);
      if (opt != nullptr && opt->count() > 0) values[k.key] = coerce(k, Json(active->flags[k.key]));
    }
    Config config(active->command, std::move(values));
    switch (active->command) {
      case kSimulate:
        return run_simulate(config, out);
      case kEstimate:
        return run_estimate(config, estimator, out);
      default:
        return run_diagnose(config, out);
    }
  } catch (const Error& e) {
    err << "error [" << e.module() << "]: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error [" << kModule << "]: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::validation);
  }
}

}  // namespace rorrlab::cli
