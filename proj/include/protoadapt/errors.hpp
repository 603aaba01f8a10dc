#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace protoadapt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

class FactorizationError : public Error {
 public:
  FactorizationError(const std::string& what, int class_index)
      : Error(what), class_index_(class_index) {}
  int class_index() const { return class_index_; }

 private:
  int class_index_;
};

// A class whose support set is too small to fit a full covariance.
class EstimationError : public Error {
 public:
  EstimationError(const std::string& what, int class_index, std::size_t count)
      : Error(what), class_index_(class_index), count_(count) {}
  int class_index() const { return class_index_; }
  std::size_t count() const { return count_; }

 private:
  int class_index_;
  std::size_t count_;
};

class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, double kept_fraction)
      : Error(what), kept_fraction_(kept_fraction) {}
  double kept_fraction() const { return kept_fraction_; }

 private:
  double kept_fraction_;
};

// NaN/Inf loss or gradient during optimization.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class SourceAccessError : public Error {
 public:
  using Error::Error;
};

}  // namespace protoadapt
