#pragma once

#include <cstdint>
#include <vector>

#include <opencv2/core.hpp>

#include "v2v/frame_sequence.hpp"
#include "v2v/landmarks.hpp"

namespace v2v {

// Face geometry in canonical units: the face half-width is 1, x points right,
// y points down, the origin is the face-ellipse centre.
struct FaceIdentity {
  cv::Vec3b skin{224, 172, 140};
  cv::Vec3b lips{176, 62, 92};
  cv::Vec3b brows{52, 36, 28};
  cv::Vec3b hair{40, 30, 26};
  cv::Vec3b iris{60, 44, 36};
  double aspect = 1.3;  // half-height / half-width
  double eye_spacing = 0.42;
  double eye_y = -0.32;
  double eye_half_width = 0.16;
  double eye_half_height = 0.08;
  double brow_gap = 0.22;
  double brow_thickness = 0.07;
  double mouth_y = 0.62;
  double mouth_half_width = 0.33;
  double lip_thickness = 0.07;
  double nose_half_width = 0.14;
};

struct FaceExpression {
  double mouth_open = 0.0;  // [0, 0.25]
  double smile = 0.0;       // corner lift, [-0.05, 0.08]
  double blink = 0.0;       // [0, 0.4]
  double brow_raise = 0.0;  // [0, 0.08]
};

struct FacePose {
  cv::Point2d center;
  double scale = 40.0;  // pixels per canonical unit
  double roll = 0.0;    // radians in image coordinates (y down), clockwise on screen
};

Shape68 canonical_landmarks(const FaceIdentity& id, const FaceExpression& ex);
Shape68 pose_landmarks(const Shape68& canonical, const FacePose& pose);

// Draws the face onto an RGB canvas and returns the ground-truth landmarks.
Shape68 render_face(cv::Mat& canvas, const FaceIdentity& id, const FaceExpression& ex,
                    const FacePose& pose);

// Identity drawn deterministically from a seed.
FaceIdentity random_identity(std::uint64_t seed);

struct TalkingHeadOptions {
  int width = 160;
  int height = 160;
  int frames = 16;
  Rational fps{25, 1};
  std::uint64_t seed = 0;
  double pose_motion = 1.0;      // scales head sway/roll amplitude
  double expression_rate = 1.0;  // scales mouth/blink frequency
  double noise_sigma = 2.0;      // per-pixel sensor noise
};

struct TalkingHead {
  FrameSequence video;
  LandmarkTrack truth;
};

// Renders a smoothly moving, talking synthetic face over a textured
// background that contains no skin-chroma pixels.
TalkingHead render_talking_head(const FaceIdentity& id, const TalkingHeadOptions& options);

}  // namespace v2v
