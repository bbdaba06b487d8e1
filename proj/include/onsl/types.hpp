#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace onsl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Violated precondition on an argument (bad grid parameters, dimension mismatch...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Time grid cannot be built for the requested parameters.
class GridError : public Error {
public:
    using Error::Error;
};

// Score is singular (point masses at t = 0).
class SingularScoreError : public Error {
public:
    using Error::Error;
};

// A caller relied on a capability the object does not provide
// (affine form, Jacobian, Laplacian).
class ContractError : public Error {
public:
    using Error::Error;
};

// Malformed or inconsistent experiment configuration / input file.
class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace onsl
