#ifndef RORRLAB_ERROR_HPP
#define RORRLAB_ERROR_HPP

#include <stdexcept>
#include <string>

namespace rorrlab {

// Error categories map one-to-one onto CLI exit codes 1, 2 and 3.
enum class ErrorKind { validation = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string module, const std::string& what)
      : std::runtime_error(what), kind_(kind), module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
  std::string module_;
};

// Bad arguments, bad configuration, violated preconditions.
struct ValidationError : Error {
  ValidationError(std::string module, const std::string& what)
      : Error(ErrorKind::validation, std::move(module), what) {}
};

// Malformed or unusable input data: schema, parse, missing values,
// sparse cells, unbuildable partitions.
struct DataError : Error {
  DataError(std::string module, const std::string& what)
      : Error(ErrorKind::data, std::move(module), what) {}
};

// Degenerate designs, rank deficiency, non-convergence.
struct NumericError : Error {
  NumericError(std::string module, const std::string& what)
      : Error(ErrorKind::numeric, std::move(module), what) {}
};

}  // namespace rorrlab

#endif
