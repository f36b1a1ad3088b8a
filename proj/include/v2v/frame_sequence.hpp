#pragma once

#include <cstddef>
#include <vector>

#include <opencv2/core.hpp>

namespace v2v {

struct Rational {
  int num = 25;
  int den = 1;

  double value() const { return static_cast<double>(num) / den; }
  bool operator==(const Rational&) const = default;
};

/// An ordered run of equal-sized 8-bit RGB frames (CV_8UC3, R first).
///
/// The constructor validates: at least one frame, identical sizes, 8UC3 type
/// and a positive frame rate. Frames are stored as-is (no deep copy).
class FrameSequence {
 public:
  FrameSequence() = default;
  FrameSequence(std::vector<cv::Mat> frames, Rational fps);

  std::size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }
  int width() const { return frames_.empty() ? 0 : frames_.front().cols; }
  int height() const { return frames_.empty() ? 0 : frames_.front().rows; }
  Rational fps() const { return fps_; }

  const cv::Mat& operator[](std::size_t i) const { return frames_[i]; }
  cv::Mat& operator[](std::size_t i) { return frames_[i]; }
  const std::vector<cv::Mat>& frames() const { return frames_; }

  auto begin() const { return frames_.begin(); }
  auto end() const { return frames_.end(); }

  FrameSequence clone() const;
  // Frames [first, first + count).
  FrameSequence slice(std::size_t first, std::size_t count) const;

 private:
  std::vector<cv::Mat> frames_;
  Rational fps_;
};

// Mean absolute per-channel difference in [0, 255] units.
double mean_abs_diff(const FrameSequence& a, const FrameSequence& b);
double mean_abs_diff(const cv::Mat& a, const cv::Mat& b);

}  // namespace v2v
