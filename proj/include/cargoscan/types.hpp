#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cargoscan {

// Dense pixel planes. Row-major so that plane(y, x) matches the scanner's
// row-major pixel order and rows are contiguous in memory.
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using PlaneD = Plane<double>;
using PlaneF = Plane<float>;
using PlaneU16 = Plane<std::uint16_t>;
using PlaneU8 = Plane<std::uint8_t>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class ErrorCategory {
  kConfig,   // bad parameters, inconsistent model/config combinations
  kFormat,   // malformed file contents
  kIo,       // filesystem failures, truncated payloads
  kDomain,   // violated operation preconditions (degenerate image, ...)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(ErrorCategory::kConfig, msg); }
[[noreturn]] inline void throw_format(const std::string& msg) { throw Error(ErrorCategory::kFormat, msg); }
[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(ErrorCategory::kIo, msg); }
[[noreturn]] inline void throw_domain(const std::string& msg) { throw Error(ErrorCategory::kDomain, msg); }

}  // namespace cargoscan
