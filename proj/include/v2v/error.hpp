#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace v2v {

enum class ErrorKind {
  Config,
  Version,
  Length,
  Decode,
  EmptyVideo,
  Io,
  NoFace,
  DetectionGap,
  Geometry,
  DegenerateFit,
  Shape,
  DistortionParameter,
  TemporalContext,
  Metric,
  SampleCount,
  Numerical,
};

std::string_view to_string(ErrorKind kind);

// Process exit code for a failure of this kind:
// 1 user/config error, 2 data error, 3 numerical error.
int exit_code(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Single-line JSON record, e.g. {"error":"decode","message":"..."}.
  std::string record() const;

 private:
  ErrorKind kind_;
};

}  // namespace v2v
