#pragma once

#include <stdexcept>
#include <string>

namespace bnnvi {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct EmptyInput : Error {
  using Error::Error;
};
struct NonPositiveNoise : Error {
  using Error::Error;
};
struct NonPositiveScale : Error {
  using Error::Error;
};
struct InvalidSigmaInit : Error {
  using Error::Error;
};
struct FamilyMismatch : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct UnitOutOfRange : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct MissingTarget : Error {
  using Error::Error;
};
struct NonFiniteLoss : Error {
  using Error::Error;
};
struct AllRunsDiverged : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};

}  // namespace bnnvi
