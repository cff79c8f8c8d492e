#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace msoma {

using cplx = std::complex<double>;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or non-finite input data.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (selection maps, bands, dimensions).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A factorization or solve failed where the math requires it to succeed.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace msoma
