#ifndef AREALRISK_ERROR_HPP
#define AREALRISK_ERROR_HPP

#include <stdexcept>
#include <string>

namespace arealrisk {

/// Base class for every error raised by the library. `code()` is a stable,
/// machine-readable tag used by the CLI's JSON error output.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string &message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string &code() const noexcept { return code_; }

private:
  std::string code_;
};

/// Argument outside the mathematical domain of an operation (tau <= 0, ...).
struct DomainError : Error {
  explicit DomainError(const std::string &message) : Error("domain_error", message) {}
};

/// Malformed adjacency structure: asymmetry, self-loops, islands.
struct StructuralError : Error {
  explicit StructuralError(const std::string &message)
      : Error("structural_error", message) {}
};

/// Input files that do not parse or do not satisfy the dataset invariants.
struct DataError : Error {
  explicit DataError(const std::string &message) : Error("data_error", message) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string &message) : Error("config_error", message) {}
};

/// Raised before or during sampling (rank deficiency, non-finite state).
struct FitError : Error {
  explicit FitError(const std::string &message) : Error("fit_error", message) {}
};

/// Posterior samples used with a transform meant for another model family.
struct TypeError : Error {
  explicit TypeError(const std::string &message) : Error("type_error", message) {}
};

} // namespace arealrisk

#endif // AREALRISK_ERROR_HPP
