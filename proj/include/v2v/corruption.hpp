#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "v2v/frame_sequence.hpp"

namespace v2v {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  bool operator==(const Interval&) const = default;
};

/// Ranges of the synthetic misalignment/colour errors applied to training
/// foregrounds. Translation is a fraction of the crop width, brightness a
/// fraction of full scale (255), angles are degrees.
struct CorruptionSpec {
  Interval rotation_deg{-15.0, 15.0};
  Interval translation{-0.05, 0.05};
  Interval scale{0.9, 1.1};
  Interval brightness{-0.2, 0.2};
  Interval contrast{0.8, 1.25};
  Interval saturation{0.8, 1.25};
  Interval hue_deg{-15.0, 15.0};
  Interval barrel_k{-0.25, 0.0};
  Interval mustache_k1{0.0, 0.25};
  Interval mustache_k2{-0.25, 0.0};
  // Each clip draws either a barrel (k) or a mustache (k1, k2) distortion.
  double mustache_probability = 0.5;
  double per_frame_jitter = 0.2;
  std::uint64_t seed = 0;

  // Throws Config for non-finite intervals, lo > hi, a non-positive scale
  // interval or jitter outside [0, 1].
  void validate() const;

  // Every interval collapsed to its identity value.
  static CorruptionSpec identity();
};

void to_json(nlohmann::json& j, const CorruptionSpec& s);
// Strict: unknown keys are rejected.
void from_json(const nlohmann::json& j, CorruptionSpec& s);

struct ColorDeltas {
  double brightness = 0.0;  // additive, pixel units
  double contrast = 1.0;    // multiplicative about the channel mean
  double saturation = 1.0;  // multiplicative on HSV saturation
  double hue_deg = 0.0;     // additive on HSV hue

  bool is_identity() const {
    return brightness == 0.0 && contrast == 1.0 && saturation == 1.0 && hue_deg == 0.0;
  }
  bool operator==(const ColorDeltas&) const = default;
};

struct PoseJitter {
  double rotation_deg = 0.0;
  cv::Point2d translation{0.0, 0.0};
  double scale = 0.0;
  bool operator==(const PoseJitter&) const = default;
};

struct CorruptionSample {
  double rotation_deg = 0.0;
  cv::Point2d translation{0.0, 0.0};  // fraction of crop width
  double scale = 1.0;
  ColorDeltas color;
  double k = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;
  std::vector<PoseJitter> per_frame;

  bool operator==(const CorruptionSample&) const = default;
};

CorruptionSample sample_corruption(const CorruptionSpec& spec, int n_frames, std::uint64_t rng_seed);

/// Radial lens model r_d = r (1 + k r^2 + k1 r^2 + k2 r^4) on radii
/// normalized by the half-diagonal (corner pixel centres sit at r = 1).
struct RadialDistortion {
  double k = 0.0, k1 = 0.0, k2 = 0.0;

  double forward(double r) const;
  double derivative(double r) const;
  // Source radius whose forward image is r_d; r_d beyond forward(1) maps
  // past the corner (returns a value > 1).
  double inverse(double r_d) const;
  bool is_monotone() const;  // d(r_d)/dr > 0 on [0, 1]
  bool is_identity() const { return k == 0.0 && k1 == 0.0 && k2 == 0.0; }
};

// Inverse-mapped radial warp with bilinear sampling and zero fill. Throws
// DistortionParameter when the radial map is not monotone on [0, 1].
cv::Mat radial_distort(const cv::Mat& frame, double k, double k1, double k2);

cv::Mat color_perturb(const cv::Mat& frame, const ColorDeltas& deltas);
// Masked variant: channel means are mask-weighted and the result is
// re-premultiplied by the mask (foreground images stay zero off-face).
cv::Mat color_perturb(const cv::Mat& frame, const ColorDeltas& deltas, const cv::Mat& soft_mask);

struct CorruptedForeground {
  FrameSequence frames;
  std::vector<cv::Mat> masks;  // transported soft masks, CV_32F
};

// Per frame: similarity about the crop centre with base + jitter params, then
// radial distortion, then colour. The mask follows the geometric warps.
CorruptedForeground apply_corruption(const FrameSequence& foreground, const std::vector<cv::Mat>& masks,
                                     const CorruptionSample& sample);
// Mask taken as the non-zero support of the foreground.
FrameSequence apply_corruption(const FrameSequence& foreground, const CorruptionSample& sample);

}  // namespace v2v
