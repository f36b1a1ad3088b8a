#include "v2v/face_regions.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "v2v/error.hpp"
#include "v2v/geometry.hpp"

namespace v2v {

cv::Rect crop_box(const Shape68& s, int frame_width, int frame_height) {
  double x0 = s[0].x, x1 = s[0].x, y0 = s[0].y, y1 = s[0].y;
  for (const auto& p : s) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const double cx = 0.5 * (x0 + x1), cy = 0.5 * (y0 + y1);
  int side = static_cast<int>(std::lround(std::max(x1 - x0, y1 - y0) * kCropExpansion));
  side = std::clamp(side, 8, std::min(frame_width, frame_height));
  int x = static_cast<int>(std::lround(cx - side / 2.0));
  int y = static_cast<int>(std::lround(cy - side / 2.0));
  x = std::clamp(x, 0, frame_width - side);
  y = std::clamp(y, 0, frame_height - side);
  return {x, y, side, side};
}

Shape68 to_crop_coords(const Shape68& s, const cv::Rect& box, int resolution) {
  const double k = static_cast<double>(resolution) / box.width;
  Shape68 out{};
  for (int i = 0; i < kLandmarkCount; ++i)
    out[i] = {(s[i].x - box.x + 0.5) * k - 0.5, (s[i].y - box.y + 0.5) * k - 0.5};
  return out;
}

cv::Mat resample_crop(const cv::Mat& frame, const cv::Rect& box, int resolution) {
  const cv::Mat roi = frame(box);
  if (box.width == resolution && box.height == resolution) return roi.clone();
  cv::Mat out;
  cv::resize(roi, out, cv::Size(resolution, resolution), 0, 0,
             box.width > resolution ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

cv::Mat face_mask(const Shape68& pts, int resolution) {
  std::vector<cv::Point2f> points;
  points.reserve(kLandmarkCount);
  for (const auto& p : pts) points.emplace_back(static_cast<float>(p.x), static_cast<float>(p.y));
  std::vector<cv::Point2f> hull;
  cv::convexHull(points, hull);
  if (hull.size() < 3 || cv::contourArea(hull) < 1e-3 * resolution)
    throw Error(ErrorKind::Geometry, "degenerate landmark hull (collinear landmarks)");

  const double dilation = kMaskDilation * resolution;
  const double feather = kMaskFeather * resolution;
  cv::Mat mask(resolution, resolution, CV_32F);
  for (int y = 0; y < resolution; ++y) {
    float* row = mask.ptr<float>(y);
    for (int x = 0; x < resolution; ++x) {
      const double d = cv::pointPolygonTest(hull, cv::Point2f(static_cast<float>(x), static_cast<float>(y)), true);
      const double outside = std::max(0.0, -d) - dilation;
      row[x] = outside <= 0 ? 1.0f : static_cast<float>(std::max(0.0, 1.0 - outside / feather));
    }
  }
  return mask;
}

cv::Mat hard_mask(const cv::Mat& soft) {
  cv::Mat out = soft >= 0.5f;
  return out / 255;
}

cv::Mat apply_mask(const cv::Mat& rgb, const cv::Mat& soft) {
  cv::Mat out(rgb.size(), CV_8UC3);
  for (int y = 0; y < rgb.rows; ++y) {
    const cv::Vec3b* src = rgb.ptr<cv::Vec3b>(y);
    const float* m = soft.ptr<float>(y);
    cv::Vec3b* dst = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < rgb.cols; ++x)
      for (int c = 0; c < 3; ++c) dst[x][c] = cv::saturate_cast<uchar>(src[x][c] * m[x]);
  }
  return out;
}

cv::Mat apply_inverse_hard_mask(const cv::Mat& rgb, const cv::Mat& soft) {
  cv::Mat out = rgb.clone();
  out.setTo(cv::Scalar::all(0), soft >= 0.5f);
  return out;
}

FgBgPair extract_fg_bg(const FrameSequence& video, const LandmarkTrack& landmarks, int resolution) {
  if (landmarks.size() != video.size())
    throw Error(ErrorKind::Length, "landmark track length differs from video length");
  std::vector<cv::Mat> fg, bg, crops;
  FgBgPair pair;
  for (std::size_t i = 0; i < video.size(); ++i) {
    const cv::Rect box = crop_box(landmarks.points[i], video.width(), video.height());
    const Shape68 local = to_crop_coords(landmarks.points[i], box, resolution);
    cv::Mat crop = resample_crop(video[i], box, resolution);
    cv::Mat mask = face_mask(local, resolution);
    fg.push_back(apply_mask(crop, mask));
    bg.push_back(apply_inverse_hard_mask(crop, mask));
    crops.push_back(crop);
    pair.mask.push_back(mask);
    pair.crop_boxes.push_back(box);
    pair.crop_landmarks.points.push_back(local);
    pair.crop_landmarks.confidence.push_back(landmarks.confidence[i]);
  }
  pair.foreground = FrameSequence(std::move(fg), video.fps());
  pair.background = FrameSequence(std::move(bg), video.fps());
  pair.crop = FrameSequence(std::move(crops), video.fps());
  return pair;
}

FrameSequence align_source_to_target(const FrameSequence& source, const LandmarkTrack& lm_src,
                                     const LandmarkTrack& lm_tgt) {
  if (source.size() != lm_src.size() || source.size() != lm_tgt.size())
    throw Error(ErrorKind::Length, "align_source_to_target: frame counts differ");
  std::vector<cv::Mat> out;
  out.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i)
    out.push_back(warp_similarity(source[i], fit_similarity(lm_src.points[i], lm_tgt.points[i])));
  return FrameSequence(std::move(out), source.fps());
}

FrameSequence composite(const FrameSequence& generated, const FrameSequence& target,
                        const FgBgPair& pair) {
  if (generated.size() != target.size() || generated.size() != pair.size())
    throw Error(ErrorKind::Length, "composite: frame counts differ");
  const int res = pair.resolution();
  if (generated.width() != res || generated.height() != res)
    throw Error(ErrorKind::Shape, "composite: generated frames must be " + std::to_string(res) +
                                      "x" + std::to_string(res));
  std::vector<cv::Mat> out;
  out.reserve(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) {
    const cv::Rect box = pair.crop_boxes[i];
    if ((box & cv::Rect(0, 0, target.width(), target.height())) != box)
      throw Error(ErrorKind::Shape, "composite: crop box outside target frame");
    cv::Mat gen = generated[i], alpha = pair.mask[i];
    if (box.width != res) {
      cv::resize(generated[i], gen, box.size(), 0, 0, cv::INTER_LINEAR);
      cv::resize(pair.mask[i], alpha, box.size(), 0, 0, cv::INTER_LINEAR);
    }
    cv::Mat frame = target[i].clone();
    cv::Mat roi = frame(box);
    for (int y = 0; y < box.height; ++y) {
      const cv::Vec3b* g = gen.ptr<cv::Vec3b>(y);
      const float* a = alpha.ptr<float>(y);
      cv::Vec3b* t = roi.ptr<cv::Vec3b>(y);
      for (int x = 0; x < box.width; ++x) {
        const float w = std::clamp(a[x], 0.0f, 1.0f);
        if (w == 0.0f) continue;
        for (int c = 0; c < 3; ++c) t[x][c] = cv::saturate_cast<uchar>(w * g[x][c] + (1.0f - w) * t[x][c]);
      }
    }
    out.push_back(frame);
  }
  return FrameSequence(std::move(out), target.fps());
}

}  // namespace v2v
