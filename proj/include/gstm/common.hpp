#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gstm {

using Index = std::ptrdiff_t;

template <typename T>
using Cx = std::complex<T>;

/// Base of every error raised by the library.
struct Error : std::runtime_error
{
  using std::runtime_error::runtime_error;
};

/// Incompatible array shapes or sizes.
struct ShapeError : Error
{
  using Error::Error;
};

/// A NaN or infinity where a finite value is required.
struct NonFiniteError : Error
{
  using Error::Error;
};

/// Malformed or out-of-range configuration / arguments.
struct ConfigError : Error
{
  ConfigError(std::string const &msg, long line = 0)
    : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg)
    , line(line)
  {
  }
  long line;
};

template <typename T>
bool all_finite(std::span<T const> v)
{
  for (auto const x : v) {
    if (!std::isfinite(x)) {
      return false;
    }
  }
  return true;
}

template <typename T>
bool all_finite(std::span<Cx<T> const> v)
{
  for (auto const x : v) {
    if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) {
      return false;
    }
  }
  return true;
}

inline void require(bool cond, std::string const &msg)
{
  if (!cond) {
    throw ShapeError(msg);
  }
}

// Sum of squares accumulated in double regardless of storage type.
template <typename T>
double norm2(std::span<T const> v)
{
  double s = 0.0;
  for (auto const x : v) {
    s += double(x) * double(x);
  }
  return s;
}

template <typename T>
double norm2(std::span<Cx<T> const> v)
{
  double s = 0.0;
  for (auto const x : v) {
    s += std::norm(Cx<double>(x));
  }
  return s;
}

} // namespace gstm
