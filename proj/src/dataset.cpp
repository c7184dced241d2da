#include "rorrlab/dataset.hpp"

#include "rorrlab/error.hpp"
#include "rorrlab/format.hpp"
#include "rorrlab/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace rorrlab {

namespace {

const char* kModule = "dataset";

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

double parse_cell(const std::string& cell, const std::string& column,
                  Index row) {
  const std::string s = trim(cell);
  if (s.empty()) {
    throw DataError(kModule, "validation error: missing value in column '" +
                                 column + "' at row " + std::to_string(row));
  }
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw DataError(kModule, "parse error: non-numeric value '" + s +
                                 "' in column '" + column + "' at row " +
                                 std::to_string(row));
  }
  if (!std::isfinite(v)) {
    throw DataError(kModule, "validation error: non-finite value in column '" +
                                 column + "' at row " + std::to_string(row));
  }
  return v;
}

void check_finite(const Eigen::Ref<const Eigen::MatrixXd>& m,
                  const std::string& what) {
  if (!m.allFinite()) {
    throw DataError(kModule, "validation error: non-finite value in " + what);
  }
}

}  // namespace

Eigen::MatrixXd ObservationTable::features() const {
  Eigen::MatrixXd out(n(), n_covariates());
  if (x_num.cols() > 0) out.leftCols(x_num.cols()) = x_num;
  if (x_cat.cols() > 0) out.rightCols(x_cat.cols()) = x_cat.cast<double>();
  return out;
}

ObservationTable ObservationTable::subset(const std::vector<Index>& rows) const {
  ObservationTable out;
  out.y_name = y_name;
  out.t_name = t_name;
  out.num_names = num_names;
  out.cat_names = cat_names;
  out.cat_levels = cat_levels;
  const auto m = static_cast<Index>(rows.size());
  out.y.resize(m);
  out.t.resize(m);
  out.x_num.resize(m, x_num.cols());
  out.x_cat.resize(m, x_cat.cols());
  for (Index i = 0; i < m; ++i) {
    const Index r = rows[static_cast<std::size_t>(i)];
    out.y(i) = y(r);
    out.t(i) = t(r);
    if (x_num.cols() > 0) out.x_num.row(i) = x_num.row(r);
    if (x_cat.cols() > 0) out.x_cat.row(i) = x_cat.row(r);
  }
  return out;
}

void ObservationTable::validate() const {
  const Index rows = n();
  if (rows < 2) {
    throw DataError(kModule, "validation error: table needs at least 2 rows");
  }
  if (t.size() != rows || (x_num.cols() > 0 && x_num.rows() != rows) ||
      (x_cat.cols() > 0 && x_cat.rows() != rows)) {
    throw DataError(kModule, "validation error: column lengths differ");
  }
  if (static_cast<Index>(num_names.size()) != x_num.cols() ||
      static_cast<Index>(cat_names.size()) != x_cat.cols()) {
    throw DataError(kModule, "validation error: column names do not match data");
  }
  check_finite(y, "column '" + y_name + "'");
  check_finite(t, "column '" + t_name + "'");
  check_finite(x_num, "numeric covariates");
  for (Index j = 0; j < x_cat.cols(); ++j) {
    const int lo = x_cat.col(j).minCoeff();
    const int hi = x_cat.col(j).maxCoeff();
    std::vector<bool> seen(static_cast<std::size_t>(std::max(hi, 0) + 1), false);
    if (lo < 0) {
      throw DataError(kModule, "validation error: negative categorical code in '" +
                                   cat_names[static_cast<std::size_t>(j)] + "'");
    }
    for (Index i = 0; i < rows; ++i) seen[static_cast<std::size_t>(x_cat(i, j))] = true;
    if (!std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) {
      throw DataError(kModule, "validation error: categorical codes in '" +
                                   cat_names[static_cast<std::size_t>(j)] +
                                   "' are not dense");
    }
  }
}

ObservationTable read_csv(std::istream& in, const ColumnRoles& roles) {
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(kModule, "schema error: missing header row");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) position.emplace(header[i], i);
  const auto locate = [&](const std::string& name, const char* role) {
    if (name.empty()) {
      throw DataError(kModule, std::string("schema error: no column given for role ") + role);
    }
    auto it = position.find(name);
    if (it == position.end()) {
      throw DataError(kModule, "schema error: column '" + name + "' (" + role +
                                   ") not found in header");
    }
    return it->second;
  };

  const std::size_t y_pos = locate(roles.y, "y");
  const std::size_t t_pos = locate(roles.t, "t");
  std::vector<std::size_t> num_pos, cat_pos;
  for (const auto& c : roles.x_num) num_pos.push_back(locate(c, "numeric covariate"));
  for (const auto& c : roles.x_cat) cat_pos.push_back(locate(c, "categorical covariate"));

  std::vector<double> y, t;
  std::vector<std::vector<double>> xn(num_pos.size());
  std::vector<std::vector<int>> xc(cat_pos.size());
  std::vector<std::map<std::string, int>> codes(cat_pos.size());
  std::vector<std::vector<std::string>> levels(cat_pos.size());

  Index row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw DataError(kModule, "parse error: row " + std::to_string(row) + " has " +
                                   std::to_string(cells.size()) + " cells, expected " +
                                   std::to_string(header.size()));
    }
    y.push_back(parse_cell(cells[y_pos], roles.y, row));
    t.push_back(parse_cell(cells[t_pos], roles.t, row));
    for (std::size_t j = 0; j < num_pos.size(); ++j) {
      xn[j].push_back(parse_cell(cells[num_pos[j]], roles.x_num[j], row));
    }
    for (std::size_t j = 0; j < cat_pos.size(); ++j) {
      std::string label = trim(cells[cat_pos[j]]);
      if (label.empty()) {
        throw DataError(kModule, "validation error: missing value in column '" +
                                     roles.x_cat[j] + "' at row " + std::to_string(row));
      }
      auto [it, inserted] = codes[j].emplace(label, static_cast<int>(levels[j].size()));
      if (inserted) levels[j].push_back(label);
      xc[j].push_back(it->second);
    }
  }

  ObservationTable table;
  const Index n = row;
  table.y_name = roles.y;
  table.t_name = roles.t;
  table.num_names = roles.x_num;
  table.cat_names = roles.x_cat;
  table.cat_levels = std::move(levels);
  table.y = Eigen::Map<Eigen::VectorXd>(y.data(), n);
  table.t = Eigen::Map<Eigen::VectorXd>(t.data(), n);
  table.x_num.resize(n, static_cast<Index>(num_pos.size()));
  table.x_cat.resize(n, static_cast<Index>(cat_pos.size()));
  for (std::size_t j = 0; j < num_pos.size(); ++j) {
    table.x_num.col(static_cast<Index>(j)) = Eigen::Map<Eigen::VectorXd>(xn[j].data(), n);
  }
  for (std::size_t j = 0; j < cat_pos.size(); ++j) {
    table.x_cat.col(static_cast<Index>(j)) = Eigen::Map<Eigen::VectorXi>(xc[j].data(), n);
  }
  table.validate();
  return table;
}

ObservationTable load_csv(const std::filesystem::path& path, const ColumnRoles& roles) {
  std::ifstream in(path);
  if (!in) {
    throw DataError(kModule, "cannot open '" + path.string() + "'");
  }
  return read_csv(in, roles);
}

void write_csv(std::ostream& out, const ObservationTable& table) {
  out << quote_if_needed(table.y_name) << ',' << quote_if_needed(table.t_name);
  for (const auto& c : table.num_names) out << ',' << quote_if_needed(c);
  for (const auto& c : table.cat_names) out << ',' << quote_if_needed(c);
  out << '\n';
  for (Index i = 0; i < table.n(); ++i) {
    out << format_double(table.y(i)) << ',' << format_double(table.t(i));
    for (Index j = 0; j < table.x_num.cols(); ++j) out << ',' << format_double(table.x_num(i, j));
    for (Index j = 0; j < table.x_cat.cols(); ++j) {
      const auto& lv = table.cat_levels[static_cast<std::size_t>(j)];
      const int code = table.x_cat(i, j);
      out << ',' << quote_if_needed(static_cast<std::size_t>(code) < lv.size()
                                        ? lv[static_cast<std::size_t>(code)]
                                        : std::to_string(code));
    }
    out << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const ObservationTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError(kModule, "cannot write '" + path.string() + "'");
  write_csv(out, table);
}

std::vector<Index> FoldAssignment::rows_in(int fold) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] == fold) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

std::vector<Index> FoldAssignment::rows_outside(int fold) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < fold_of.size(); ++i) {
    if (fold_of[i] != fold) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

std::vector<Index> FoldAssignment::fold_sizes() const {
  std::vector<Index> sizes(static_cast<std::size_t>(n_folds), 0);
  for (int f : fold_of) ++sizes[static_cast<std::size_t>(f)];
  return sizes;
}

namespace {

std::vector<Index> seeded_permutation(Index n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  CounterRng rng(seed, stream);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

}  // namespace

FoldAssignment make_folds(Index n, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ValidationError(kModule, "n_folds must be at least 2");
  if (n_folds > n) {
    throw ValidationError(kModule, "n_folds (" + std::to_string(n_folds) +
                                       ") exceeds row count (" + std::to_string(n) + ")");
  }
  const auto perm = seeded_permutation(n, seed, 0xF01D);
  FoldAssignment folds;
  folds.n_folds = n_folds;
  folds.fold_of.assign(static_cast<std::size_t>(n), 0);
  for (Index pos = 0; pos < n; ++pos) {
    folds.fold_of[static_cast<std::size_t>(perm[static_cast<std::size_t>(pos)])] =
        static_cast<int>(pos % n_folds);
  }
  return folds;
}

HoldoutSplit make_holdout_split(Index n, double validation_fraction,
                                double test_fraction, std::uint64_t seed) {
  if (!(validation_fraction > 0.0) || !(test_fraction > 0.0) ||
      validation_fraction + test_fraction >= 1.0) {
    throw ValidationError(kModule, "holdout fractions must be positive and sum below 1");
  }
  const auto n_val = static_cast<Index>(std::llround(validation_fraction * static_cast<double>(n)));
  const auto n_test = static_cast<Index>(std::llround(test_fraction * static_cast<double>(n)));
  if (n_val < 1 || n_test < 2 || n - n_val - n_test < 2) {
    throw ValidationError(kModule, "holdout split leaves an empty part");
  }
  const auto perm = seeded_permutation(n, seed, 0x5B17);
  HoldoutSplit split;
  for (Index pos = 0; pos < n; ++pos) {
    const Index r = perm[static_cast<std::size_t>(pos)];
    if (pos < n_test) {
      split.test.push_back(r);
    } else if (pos < n_test + n_val) {
      split.validation.push_back(r);
    } else {
      split.train.push_back(r);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

namespace {

Eigen::VectorXd* column_by_name(ObservationTable& table, const std::string& name,
                                Index* num_col) {
  *num_col = -1;
  if (name == "y" || name == table.y_name) return &table.y;
  if (name == "t" || name == table.t_name) return &table.t;
  for (std::size_t j = 0; j < table.num_names.size(); ++j) {
    if (table.num_names[j] == name) {
      *num_col = static_cast<Index>(j);
      return nullptr;
    }
  }
  throw ValidationError(kModule, "cannot standardize unknown or categorical column '" +
                                     name + "'");
}

}  // namespace

std::pair<ObservationTable, StandardizationSpec> standardize(
    const ObservationTable& table, const std::vector<std::string>& columns) {
  ObservationTable out = table;
  StandardizationSpec spec;
  spec.enabled = true;
  for (const auto& name : columns) {
    Index num_col = -1;
    Eigen::VectorXd* col = column_by_name(out, name, &num_col);
    auto apply = [&](auto&& v) {
      const double m = v.mean();
      const double sd = std::sqrt((v.array() - m).square().sum() /
                                  static_cast<double>(v.size() - 1));
      if (!(sd > 0.0) || !std::isfinite(sd)) {
        throw NumericError(kModule, "degenerate-column error: '" + name +
                                        "' has zero variance");
      }
      v = (v.array() - m) / sd;
      spec.columns.push_back(name);
      spec.means.push_back(m);
      spec.sds.push_back(sd);
    };
    if (col != nullptr) {
      apply(*col);
    } else {
      apply(out.x_num.col(num_col));
    }
  }
  return {std::move(out), std::move(spec)};
}

ObservationTable unstandardize(const ObservationTable& table,
                               const StandardizationSpec& spec) {
  ObservationTable out = table;
  if (!spec.enabled) return out;
  for (std::size_t k = 0; k < spec.columns.size(); ++k) {
    Index num_col = -1;
    Eigen::VectorXd* col = column_by_name(out, spec.columns[k], &num_col);
    if (col != nullptr) {
      *col = col->array() * spec.sds[k] + spec.means[k];
    } else {
      out.x_num.col(num_col) = out.x_num.col(num_col).array() * spec.sds[k] + spec.means[k];
    }
  }
  return out;
}

}  // namespace rorrlab
