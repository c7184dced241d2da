#ifndef RORRLAB_DATASET_HPP
#define RORRLAB_DATASET_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace rorrlab {

using Index = Eigen::Index;

// Outcome, treatment and covariates. Every column has n rows, numeric
// cells are finite and categorical codes are dense, starting at 0.
struct ObservationTable {
  Eigen::VectorXd y;
  Eigen::VectorXd t;
  Eigen::MatrixXd x_num;
  Eigen::MatrixXi x_cat;

  std::string y_name = "y";
  std::string t_name = "t";
  std::vector<std::string> num_names;
  std::vector<std::string> cat_names;
  // cat_levels[j][code] is the original label of code in column j.
  std::vector<std::vector<std::string>> cat_levels;

  Index n() const { return y.size(); }
  Index n_covariates() const { return x_num.cols() + x_cat.cols(); }

  // Numeric covariates followed by categorical codes, as one dense matrix.
  Eigen::MatrixXd features() const;

  // Rows in the given order. Categorical codes are kept (not re-densified),
  // so subsets of one table stay comparable.
  ObservationTable subset(const std::vector<Index>& rows) const;

  // Throws DataError when an invariant fails.
  void validate() const;
};

struct ColumnRoles {
  std::string y;
  std::string t;
  std::vector<std::string> x_num;
  std::vector<std::string> x_cat;
};

ObservationTable read_csv(std::istream& in, const ColumnRoles& roles);
ObservationTable load_csv(const std::filesystem::path& path,
                          const ColumnRoles& roles);

// Writes y, t, numeric then categorical columns (labels, not codes), with
// shortest round-trip formatting so that load(write(x)) == x.
void write_csv(std::ostream& out, const ObservationTable& table);
void save_csv(const std::filesystem::path& path, const ObservationTable& table);

struct FoldAssignment {
  std::vector<int> fold_of;
  int n_folds = 0;

  std::vector<Index> rows_in(int fold) const;
  std::vector<Index> rows_outside(int fold) const;
  std::vector<Index> fold_sizes() const;
};

// Balanced random partition of 0..n-1; identical for identical inputs.
FoldAssignment make_folds(Index n, int n_folds, std::uint64_t seed);

// Three-way train / validation / test split for the holdout workflow.
struct HoldoutSplit {
  std::vector<Index> train;
  std::vector<Index> validation;
  std::vector<Index> test;
};

HoldoutSplit make_holdout_split(Index n, double validation_fraction,
                                double test_fraction, std::uint64_t seed);

struct StandardizationSpec {
  bool enabled = false;
  std::vector<std::string> columns;
  std::vector<double> means;
  std::vector<double> sds;
};

// Standardizes the named columns ("y", "t", the table's own y/t names, or
// numeric covariate names) to sample mean 0 and sample sd 1.
std::pair<ObservationTable, StandardizationSpec> standardize(
    const ObservationTable& table, const std::vector<std::string>& columns);

ObservationTable unstandardize(const ObservationTable& table,
                               const StandardizationSpec& spec);

}  // namespace rorrlab

#endif
