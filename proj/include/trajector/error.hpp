#pragma once

#include <stdexcept>
#include <string>

namespace trajector {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TrackError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class GimbalLockError : public GeometryError {
 public:
  using GeometryError::GeometryError;
};

// Fitting failed on a specific frame of a track.
class FrameFitError : public GeometryError {
 public:
  FrameFitError(std::size_t frame, const std::string& what)
      : GeometryError("frame " + std::to_string(frame) + ": " + what), frame_(frame) {}
  std::size_t frame() const { return frame_; }

 private:
  std::size_t frame_;
};

class SequenceError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class FusionError : public Error {
 public:
  using Error::Error;
};

class TotalConflictError : public FusionError {
 public:
  using FusionError::FusionError;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace trajector
