#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sq {

// Exception taxonomy used across the library. The CLI maps these onto
// its exit-code contract (input errors -> 2, numeric failures -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when an optimization run produces a non-finite loss.
class AbortedRunError : public Error {
 public:
  AbortedRunError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

class InternalError : public Error {
 public:
  using Error::Error;
};

// splitmix64 step; used to derive independent stream seeds from one root seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace sq
