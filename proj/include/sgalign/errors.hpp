#pragma once

#include <stdexcept>
#include <string>

namespace sga {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateConfiguration : Error {
  using Error::Error;
};
struct InsufficientCorrespondences : Error {
  using Error::Error;
};
struct KTooLarge : Error {
  using Error::Error;
};
struct InfeasibleConfig : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct SchemaVersionMismatch : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct EmptyObject : Error {
  using Error::Error;
};
struct ObjectOutOfRange : Error {
  using Error::Error;
};
struct NoCorrespondences : Error {
  using Error::Error;
};
struct DisconnectedScenes : Error {
  using Error::Error;
};
struct EmptyInput : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct EmptyCorrespondences : Error {
  using Error::Error;
};
struct EmptyCloud : Error {
  using Error::Error;
};
struct EmptyGroundTruth : Error {
  using Error::Error;
};
struct EmptyBatch : Error {
  using Error::Error;
};
struct DivergenceDetected : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct CheckpointMismatch : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace sga
