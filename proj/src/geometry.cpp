#include "v2v/geometry.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <opencv2/imgproc.hpp>

#include "v2v/error.hpp"

namespace v2v {

cv::Point2d AffineParams::apply(const cv::Point2d& p) const {
  const double c = std::cos(rotation), s = std::sin(rotation);
  return {scale * (c * p.x - s * p.y) + translation.x, scale * (s * p.x + c * p.y) + translation.y};
}

AffineParams AffineParams::inverse() const {
  AffineParams inv;
  inv.rotation = -rotation;
  inv.scale = 1.0 / scale;
  const double c = std::cos(-rotation), s = std::sin(-rotation);
  inv.translation = {-(c * translation.x - s * translation.y) / scale,
                     -(s * translation.x + c * translation.y) / scale};
  return inv;
}

cv::Mat AffineParams::matrix() const {
  const double c = std::cos(rotation) * scale, s = std::sin(rotation) * scale;
  return (cv::Mat_<double>(2, 3) << c, -s, translation.x, s, c, translation.y);
}

AffineParams AffineParams::about_center(double rotation, double scale, cv::Point2d translation,
                                        cv::Point2d center) {
  // p' = center + scale R (p - center) + translation
  AffineParams t;
  t.rotation = rotation;
  t.scale = scale;
  const cv::Point2d rc = AffineParams{rotation, scale, {0, 0}}.apply(center);
  t.translation = center - rc + translation;
  return t;
}

AffineParams compose(const AffineParams& a, const AffineParams& b) {
  AffineParams out;
  out.rotation = a.rotation + b.rotation;
  out.scale = a.scale * b.scale;
  out.translation = a.apply(b.translation);
  return out;
}

AffineParams fit_similarity(std::span<const cv::Point2d> src, std::span<const cv::Point2d> tgt) {
  if (src.size() != tgt.size() || src.size() < 2)
    throw Error(ErrorKind::DegenerateFit, "similarity fit needs two equal-sized point sets");
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Matrix2Xd x(2, n), y(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.col(i) << src[i].x, src[i].y;
    y.col(i) << tgt[i].x, tgt[i].y;
  }
  const Eigen::Vector2d mx = x.rowwise().mean(), my = y.rowwise().mean();
  x.colwise() -= mx;
  y.colwise() -= my;
  const double var_x = x.squaredNorm() / static_cast<double>(n);
  const double var_y = y.squaredNorm() / static_cast<double>(n);
  if (!(var_x > 1e-12) || !(var_y > 1e-12))
    throw Error(ErrorKind::DegenerateFit, "similarity fit on a zero-variance point set");

  const Eigen::Matrix2d cov = y * x.transpose() / static_cast<double>(n);
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix2d s = Eigen::Matrix2d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(1, 1) = -1;
  const Eigen::Matrix2d r = svd.matrixU() * s * svd.matrixV().transpose();
  const double scale = (svd.singularValues().asDiagonal() * s).trace() / var_x;
  const Eigen::Vector2d t = my - scale * r * mx;

  AffineParams out;
  out.rotation = std::atan2(r(1, 0), r(0, 0));
  out.scale = scale;
  out.translation = {t.x(), t.y()};
  if (!(scale > 0)) throw Error(ErrorKind::DegenerateFit, "similarity fit produced a non-positive scale");
  return out;
}

AffineParams fit_similarity(const Shape68& src, const Shape68& tgt) {
  return fit_similarity(std::span<const cv::Point2d>(src), std::span<const cv::Point2d>(tgt));
}

double residual_rms(const AffineParams& t, std::span<const cv::Point2d> src,
                    std::span<const cv::Point2d> tgt) {
  double total = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const cv::Point2d d = t.apply(src[i]) - tgt[i];
    total += d.dot(d);
  }
  return std::sqrt(total / static_cast<double>(src.size()));
}

Shape68 transform(const Shape68& s, const AffineParams& t) {
  Shape68 out{};
  for (int i = 0; i < kLandmarkCount; ++i) out[i] = t.apply(s[i]);
  return out;
}

cv::Mat warp_similarity(const cv::Mat& image, const AffineParams& t) {
  cv::Mat out;
  cv::warpAffine(image, out, t.matrix(), image.size(), cv::INTER_LINEAR, cv::BORDER_CONSTANT,
                 cv::Scalar::all(0));
  return out;
}

}  // namespace v2v
