#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "v2v/frame_sequence.hpp"

namespace v2v {

inline constexpr int kLandmarkCount = 68;

// Index ranges of the standard 68-point annotation.
namespace lm {
inline constexpr int kJawBegin = 0, kJawEnd = 17;
inline constexpr int kBrowBegin = 17, kBrowEnd = 27;
inline constexpr int kNoseBegin = 27, kNoseEnd = 36;
inline constexpr int kLeftEyeBegin = 36, kLeftEyeEnd = 42;
inline constexpr int kRightEyeBegin = 42, kRightEyeEnd = 48;
inline constexpr int kMouthBegin = 48, kMouthEnd = 68;
inline constexpr int kInnerMouthBegin = 60;
}  // namespace lm

using Shape68 = std::array<cv::Point2d, kLandmarkCount>;

cv::Point2d centroid(const Shape68& s);
cv::Point2d left_eye_center(const Shape68& s);
cv::Point2d right_eye_center(const Shape68& s);

/// Per-frame 68-point landmarks in frame pixel coordinates.
struct LandmarkTrack {
  std::vector<Shape68> points;
  std::vector<float> confidence;

  std::size_t size() const { return points.size(); }
  LandmarkTrack slice(std::size_t first, std::size_t count) const;
};

// Raw (unnormalized) mean Euclidean landmark distance over all points and
// frames. The similarity-normalized evaluation metric lives in metrics.hpp.
double mean_landmark_distance(const LandmarkTrack& a, const LandmarkTrack& b);
double mean_landmark_distance(const Shape68& a, const Shape68& b);

/// Single-image landmark backend. Returns nullopt when no face is found.
class LandmarkDetector {
 public:
  virtual ~LandmarkDetector() = default;
  virtual std::optional<Shape68> detect(const cv::Mat& rgb) const = 0;
  virtual std::string name() const = 0;
};

/// Default backend: fits the 68-point layout to the feature blobs of faces
/// produced by the synthetic talking-head renderer (skin-chroma face region,
/// non-skin holes for brows, eyes and mouth).
class ChromaLandmarkDetector final : public LandmarkDetector {
 public:
  std::optional<Shape68> detect(const cv::Mat& rgb) const override;
  std::string name() const override { return "chroma-blob-v1"; }
};

std::unique_ptr<LandmarkDetector> make_landmark_detector(const std::string& backend);

inline constexpr int kMaxInterpolatedGap = 5;

// Runs the detector on every frame. Undetected runs of at most
// kMaxInterpolatedGap frames are linearly interpolated between the nearest
// detected neighbours (copied from the single neighbour at clip edges) and get
// confidence 0. Throws NoFace when nothing is detected, DetectionGap for a
// longer run.
LandmarkTrack detect_landmarks(const FrameSequence& video, const LandmarkDetector& detector);

// Fills gaps of a partially detected track in place; exposed for testing.
LandmarkTrack fill_detection_gaps(const std::vector<std::optional<Shape68>>& detections);

void clamp_to_frame(Shape68& s, int width, int height);

// Landmark cache: "V2VLMK01", u32 frame count, N*68*2 float32, N float32
// confidences (little-endian).
void write_landmark_cache(const LandmarkTrack& track, const std::filesystem::path& path);
LandmarkTrack read_landmark_cache(const std::filesystem::path& path);

// Hex SHA-256 of the video content (file bytes, or the sorted frame files of
// an image-sequence directory).
std::string video_content_hash(const std::filesystem::path& path);

}  // namespace v2v
