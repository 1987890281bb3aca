#pragma once

#include <stdexcept>
#include <string>

namespace georeg {

/// Base class for all georeg failures so callers can catch the whole family.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible (matrix products, broadcasts, slices).
struct DimensionError : Error {
  using Error::Error;
};

/// An argument value is outside its documented domain.
struct ParameterError : Error {
  using Error::Error;
};

/// Malformed or inconsistent input data (files, feature tables, clouds).
struct DataError : Error {
  using Error::Error;
};

/// Invalid model or pipeline configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Pose estimation could not produce a transform.
struct EstimationError : Error {
  explicit EstimationError(const std::string& what, bool degenerate = false)
      : Error(what), degenerate(degenerate) {}
  /// True when the failure comes from a rank-deficient point configuration.
  bool degenerate = false;
};

/// A loss term could not be formed (e.g. no anchors in a supervision table).
struct LossError : Error {
  using Error::Error;
};

/// Failure during an optimization step.
struct TrainingError : Error {
  using Error::Error;
};

/// Wraps a failure inside run_pipeline with the stage name and a digest of
/// the offending input so benchmark logs identify the pair responsible.
struct PipelineError : Error {
  PipelineError(const std::string& stage, const std::string& digest,
                const std::string& what)
      : Error("stage '" + stage + "' (input " + digest + "): " + what),
        stage(stage),
        digest(digest) {}
  std::string stage;
  std::string digest;
};

}  // namespace georeg
