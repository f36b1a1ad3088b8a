#pragma once

#include <span>

#include <opencv2/core.hpp>

#include "v2v/landmarks.hpp"

namespace v2v {

/// Similarity transform p' = scale * R(rotation) * p + translation.
struct AffineParams {
  double rotation = 0.0;  // radians
  double scale = 1.0;
  cv::Point2d translation{0.0, 0.0};

  cv::Point2d apply(const cv::Point2d& p) const;
  AffineParams inverse() const;
  // 2x3 CV_64F forward matrix, usable with cv::warpAffine.
  cv::Mat matrix() const;

  static AffineParams about_center(double rotation, double scale, cv::Point2d translation,
                                   cv::Point2d center);
};

// (a ∘ b)(p) = a(b(p))
AffineParams compose(const AffineParams& a, const AffineParams& b);

// Least-squares similarity (Umeyama) mapping src onto tgt. Throws
// DegenerateFit for zero-variance point sets.
AffineParams fit_similarity(std::span<const cv::Point2d> src, std::span<const cv::Point2d> tgt);
AffineParams fit_similarity(const Shape68& src, const Shape68& tgt);

double residual_rms(const AffineParams& t, std::span<const cv::Point2d> src,
                    std::span<const cv::Point2d> tgt);

Shape68 transform(const Shape68& s, const AffineParams& t);

// Bilinear warp with zero fill outside the source.
cv::Mat warp_similarity(const cv::Mat& image, const AffineParams& t);

}  // namespace v2v
