#pragma once

#include <stdexcept>
#include <string>

namespace mjls {

// All library errors derive from Error so callers can catch one type.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Mode-chain data produces a prior that is (numerically) zero somewhere.
struct DegenerateChain : Error {
  using Error::Error;
};

// Matrix/vector dimensions inconsistent with the declared sizes.
struct DimensionMismatch : Error {
  using Error::Error;
};

// A matrix required to be positive semidefinite is not (beyond tolerance).
struct NotPsd : Error {
  using Error::Error;
};

// A lifted second-moment matrix fails its structural invariants
// (bottom-right entry != 1, wrong size, ...).
struct MalformedLift : Error {
  using Error::Error;
};

// A ball-constraint reference point violates the strict admissibility
// condition ||ref - center|| < radius.
struct ReferenceOutOfBall : Error {
  using Error::Error;
};

// A moment pair (U, Y) admits no exact randomized feedback realization.
struct NotRealizable : Error {
  using Error::Error;
};

// Bad configuration document or command-line usage.
struct ConfigError : Error {
  using Error::Error;
};

// The conic backend failed (did not converge / internal error).
struct BackendFailure : Error {
  using Error::Error;
};

// Iterative steering finished without any optimal iterate.
struct NoFeasibleIterate : Error {
  using Error::Error;
};

}  // namespace mjls
