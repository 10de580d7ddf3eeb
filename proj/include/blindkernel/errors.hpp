#pragma once

#include <stdexcept>
#include <string>

namespace blindkernel {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File could not be read, decoded or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Inputs violate a documented precondition (sizes, shapes, ranges).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Kernel whose total mass is zero (or too close to it) where a
/// normalization or centroid is required.
class DegenerateKernelError : public Error {
 public:
  using Error::Error;
};

/// A persisted benchmark entry is missing or fails its invariants.
class IntegrityError : public Error {
 public:
  IntegrityError(std::string entry, const std::string& what)
      : Error(what), entry_(std::move(entry)) {}
  const std::string& entry() const { return entry_; }

 private:
  std::string entry_;
};

}  // namespace blindkernel
