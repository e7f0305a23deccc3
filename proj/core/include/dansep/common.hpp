#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace dansep {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using ComplexMatrix = Eigen::MatrixXcd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or usage (maps to CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during training or gradient evaluation.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 8000;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// Throws Error if any sample is non-finite or the rate is not positive.
void validate(const Waveform& wave);

}  // namespace dansep
