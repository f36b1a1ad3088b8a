#include "v2v/frame_sequence.hpp"

#include <cmath>
#include <string>

#include "v2v/error.hpp"

namespace v2v {

FrameSequence::FrameSequence(std::vector<cv::Mat> frames, Rational fps)
    : frames_(std::move(frames)), fps_(fps) {
  if (frames_.empty()) throw Error(ErrorKind::EmptyVideo, "frame sequence has no frames");
  if (fps_.num <= 0 || fps_.den <= 0)
    throw Error(ErrorKind::Shape, "frame rate must be positive");
  const cv::Size size = frames_.front().size();
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    const cv::Mat& f = frames_[i];
    if (f.type() != CV_8UC3)
      throw Error(ErrorKind::Shape, "frame " + std::to_string(i) + " is not 8-bit RGB");
    if (f.size() != size)
      throw Error(ErrorKind::Shape, "frame " + std::to_string(i) + " size differs from frame 0");
  }
}

FrameSequence FrameSequence::clone() const {
  std::vector<cv::Mat> out;
  out.reserve(frames_.size());
  for (const auto& f : frames_) out.push_back(f.clone());
  return FrameSequence(std::move(out), fps_);
}

FrameSequence FrameSequence::slice(std::size_t first, std::size_t count) const {
  if (first + count > frames_.size() || count == 0)
    throw Error(ErrorKind::Length, "slice out of range");
  return FrameSequence(std::vector<cv::Mat>(frames_.begin() + first, frames_.begin() + first + count),
                       fps_);
}

double mean_abs_diff(const cv::Mat& a, const cv::Mat& b) {
  if (a.size() != b.size() || a.type() != b.type())
    throw Error(ErrorKind::Shape, "mean_abs_diff: mismatched images");
  cv::Mat diff;
  cv::absdiff(a, b, diff);
  const cv::Scalar s = cv::mean(diff);
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) total += s[c];
  return total / a.channels();
}

double mean_abs_diff(const FrameSequence& a, const FrameSequence& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Length, "mean_abs_diff: frame counts differ");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += mean_abs_diff(a[i], b[i]);
  return total / static_cast<double>(a.size());
}

}  // namespace v2v
