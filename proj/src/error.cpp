#include "v2v/error.hpp"

#include <nlohmann/json.hpp>

namespace v2v {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Version: return "version";
    case ErrorKind::Length: return "length";
    case ErrorKind::Decode: return "decode";
    case ErrorKind::EmptyVideo: return "empty_video";
    case ErrorKind::Io: return "io";
    case ErrorKind::NoFace: return "no_face";
    case ErrorKind::DetectionGap: return "detection_gap";
    case ErrorKind::Geometry: return "geometry";
    case ErrorKind::DegenerateFit: return "degenerate_fit";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::DistortionParameter: return "distortion_parameter";
    case ErrorKind::TemporalContext: return "temporal_context";
    case ErrorKind::Metric: return "metric";
    case ErrorKind::SampleCount: return "sample_count";
    case ErrorKind::Numerical: return "numerical";
  }
  return "unknown";
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config:
    case ErrorKind::Version:
    case ErrorKind::Length:
      return 1;
    case ErrorKind::Numerical:
      return 3;
    default:
      return 2;
  }
}

std::string Error::record() const {
  nlohmann::json j;
  j["error"] = std::string(to_string(kind_));
  j["exit_code"] = exit_code(kind_);
  j["message"] = what();
  return j.dump();
}

}  // namespace v2v
