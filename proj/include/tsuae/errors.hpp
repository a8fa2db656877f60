#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace tsuae {

//! Operand dimensions do not agree.
class ShapeError : public std::invalid_argument
{
public:
  using std::invalid_argument::invalid_argument;
};

//! A documented precondition was violated by the caller.
class ContractError : public std::logic_error
{
public:
  using std::logic_error::logic_error;
};

//! Input data cannot support the requested computation (too few samples,
//! zero variance, malformed CSV, unknown column, ...).
class DataError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Iterative fitting produced a non-finite loss or otherwise diverged.
class TrainingError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Linear system without a unique solution.
class SingularError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! A requested quantity is not available from the given inputs.
class UnavailableError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Malformed or unsupported configuration.
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! File system / persistence failure, including checksum and version
//! mismatches.
class IoError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Stored model written by an incompatible format version.
class UnsupportedVersionError : public IoError
{
public:
  using IoError::IoError;
};

//! Stored model whose content does not match its checksum (corrupted or
//! truncated).
class ChecksumError : public IoError
{
public:
  using IoError::IoError;
};

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols)
{
  return std::to_string(rows) + "x" + std::to_string(cols);
}

template<typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what)
{
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
  }
}

} // namespace tsuae
