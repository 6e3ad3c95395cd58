#pragma once

#include <stdexcept>
#include <string>

namespace mfunet {

/// Base class for every error raised by the library. `kind()` is a stable
/// machine-readable tag used by the CLI error record.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error("shape_error", w) {}
};

struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error("index_error", w) {}
};

struct NumericalError : Error {
  explicit NumericalError(const std::string& w) : Error("numerical_error", w) {}
};

struct MeshError : Error {
  explicit MeshError(const std::string& w) : Error("mesh_error", w) {}
};

struct SolverError : Error {
  explicit SolverError(const std::string& w) : Error("solver_error", w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io_error", w) {}
};

struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error("format_error", w) {}
};

struct ChecksumError : Error {
  explicit ChecksumError(const std::string& w) : Error("checksum_error", w) {}
};

struct VersionError : Error {
  explicit VersionError(const std::string& w) : Error("version_error", w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config_error", w) {}
};

struct MetricError : Error {
  explicit MetricError(const std::string& w) : Error("metric_error", w) {}
};

}  // namespace mfunet
