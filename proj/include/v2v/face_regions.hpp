#pragma once

#include <vector>

#include <opencv2/core.hpp>

#include "v2v/frame_sequence.hpp"
#include "v2v/landmarks.hpp"

namespace v2v {

inline constexpr double kCropExpansion = 1.8;
inline constexpr double kMaskDilation = 0.02;  // fraction of crop width
inline constexpr double kMaskFeather = 0.05;   // fraction of crop width

/// Foreground/background split of a face video in crop space. All images are
/// resolution x resolution; crop_boxes locate each crop in its source frame.
struct FgBgPair {
  FrameSequence foreground;  // crop * mask
  FrameSequence background;  // crop * (1 - hard mask)
  FrameSequence crop;        // clean crop
  std::vector<cv::Mat> mask;  // CV_32F soft mask in [0, 1]
  std::vector<cv::Rect> crop_boxes;
  LandmarkTrack crop_landmarks;

  std::size_t size() const { return mask.size(); }
  int resolution() const { return crop.width(); }
};

// Landmark bounding square grown by kCropExpansion, shifted and clamped into
// the frame (stays square; shrinks only when the frame is smaller).
cv::Rect crop_box(const Shape68& landmarks, int frame_width, int frame_height);

// Frame -> crop coordinates for a box resampled to `resolution`.
Shape68 to_crop_coords(const Shape68& s, const cv::Rect& box, int resolution);

cv::Mat resample_crop(const cv::Mat& frame, const cv::Rect& box, int resolution);

// Soft face mask from crop-space landmarks: 1 inside the convex hull dilated
// by kMaskDilation * width, then a linear ramp to 0 over kMaskFeather * width.
// Throws Geometry for a degenerate (collinear) hull.
cv::Mat face_mask(const Shape68& crop_landmarks, int resolution);
cv::Mat hard_mask(const cv::Mat& soft_mask);  // CV_8U, 1 where mask >= 0.5

cv::Mat apply_mask(const cv::Mat& rgb, const cv::Mat& soft_mask);
cv::Mat apply_inverse_hard_mask(const cv::Mat& rgb, const cv::Mat& soft_mask);

FgBgPair extract_fg_bg(const FrameSequence& video, const LandmarkTrack& landmarks,
                       int resolution = 256);

// Warps every source frame by the similarity fit of its landmarks onto the
// target landmarks (bilinear, zero fill). Landmarks are in the frames' own
// coordinates.
FrameSequence align_source_to_target(const FrameSequence& source, const LandmarkTrack& source_landmarks,
                                     const LandmarkTrack& target_landmarks);

// Alpha-blends each generated crop into the matching target frame using the
// pair's soft mask. Pixels outside the crop boxes are copied untouched.
FrameSequence composite(const FrameSequence& generated, const FrameSequence& target_full,
                        const FgBgPair& pair);

}  // namespace v2v
