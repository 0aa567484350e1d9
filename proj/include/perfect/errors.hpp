#pragma once

#include <stdexcept>
#include <string>

namespace perfect {

// Base of every error the samplers throw. Each subclass maps onto one CLI
// exit code, see cli/run.hpp.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A sampler reached its configured cap (depth, blocks, iterations) without
// certifying its output. Never accompanied by a draw.
class CapExceeded : public Error {
 public:
  using Error::Error;
};

// Bad arguments or mismatched shapes.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A chain lacks a property an oracle needs (irreducible, aperiodic, ...).
class ChainPropertyError : public Error {
 public:
  using Error::Error;
};

// A declared monotone step broke the order at runtime.
class OrderViolation : public Error {
 public:
  using Error::Error;
};

// An exact oracle is not available for the requested model/size.
class OracleUnavailable : public Error {
 public:
  using Error::Error;
};

}  // namespace perfect
