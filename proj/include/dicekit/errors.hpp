#pragma once

#include <stdexcept>
#include <string>

namespace dicekit {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad probabilities, sizes, names or config values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The chain induced by the policy at gamma = 1 is reducible or periodic.
class NonErgodic : public Error {
 public:
  using Error::Error;
};

class SingularSystem : public Error {
 public:
  using Error::Error;
};

/// Feature columns are not linearly independent.
class RankDeficientFeatures : public Error {
 public:
  using Error::Error;
};

/// A precondition of an analytic result does not hold (e.g. xi = 0 with A
/// singular). Reported rather than silently certified.
class AssumptionViolated : public Error {
 public:
  using Error::Error;
};

/// A learner parameter became non-finite or exceeded the divergence bound.
class Diverged : public Error {
 public:
  using Error::Error;
};

}  // namespace dicekit
