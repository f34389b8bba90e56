#pragma once

#include <stdexcept>
#include <string>

namespace volimp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ParameterError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct SizeError : Error { using Error::Error; };
struct DegeneratePosteriorError : Error { using Error::Error; };

}  // namespace volimp
