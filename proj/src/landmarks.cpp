#include "v2v/landmarks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>
#include <opencv2/imgproc.hpp>

#include "v2v/error.hpp"
#include "v2v/video_io.hpp"

namespace fs = std::filesystem;

namespace v2v {

cv::Point2d centroid(const Shape68& s) {
  cv::Point2d c(0, 0);
  for (const auto& p : s) c += p;
  return c * (1.0 / kLandmarkCount);
}

cv::Point2d left_eye_center(const Shape68& s) {
  cv::Point2d c(0, 0);
  for (int i = lm::kLeftEyeBegin; i < lm::kLeftEyeEnd; ++i) c += s[i];
  return c * (1.0 / 6);
}

cv::Point2d right_eye_center(const Shape68& s) {
  cv::Point2d c(0, 0);
  for (int i = lm::kRightEyeBegin; i < lm::kRightEyeEnd; ++i) c += s[i];
  return c * (1.0 / 6);
}

LandmarkTrack LandmarkTrack::slice(std::size_t first, std::size_t count) const {
  if (first + count > points.size()) throw Error(ErrorKind::Length, "landmark slice out of range");
  LandmarkTrack out;
  out.points.assign(points.begin() + first, points.begin() + first + count);
  out.confidence.assign(confidence.begin() + first, confidence.begin() + first + count);
  return out;
}

double mean_landmark_distance(const Shape68& a, const Shape68& b) {
  double total = 0.0;
  for (int i = 0; i < kLandmarkCount; ++i) total += cv::norm(a[i] - b[i]);
  return total / kLandmarkCount;
}

double mean_landmark_distance(const LandmarkTrack& a, const LandmarkTrack& b) {
  if (a.size() != b.size() || a.size() == 0)
    throw Error(ErrorKind::Length, "landmark tracks differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += mean_landmark_distance(a.points[i], b.points[i]);
  return total / static_cast<double>(a.size());
}

void clamp_to_frame(Shape68& s, int width, int height) {
  for (auto& p : s) {
    p.x = std::clamp(p.x, 0.0, static_cast<double>(width - 1));
    p.y = std::clamp(p.y, 0.0, static_cast<double>(height - 1));
  }
}

// ---------------------------------------------------------------------------
// Chroma blob detector

namespace {

bool is_skin(const cv::Vec3b& p) { return p[0] > p[1] + 8 && p[1] > p[2] + 5 && p[0] > 70; }

struct FaceFrame {
  cv::Point2d center;
  double roll = 0.0;

  cv::Point2d to_face(const cv::Point2d& p) const {
    const double c = std::cos(roll), s = std::sin(roll);
    const cv::Point2d d = p - center;
    return {c * d.x + s * d.y, -s * d.x + c * d.y};
  }
  cv::Point2d to_image(const cv::Point2d& q) const {
    const double c = std::cos(roll), s = std::sin(roll);
    return {center.x + c * q.x - s * q.y, center.y + s * q.x + c * q.y};
  }
};

struct Blob {
  int label = 0;
  double area = 0;
  cv::Point2d image_centroid;
  cv::Point2d face_centroid;
  double u_min = 0, u_max = 0;
};

class BlobScanner {
 public:
  BlobScanner(const cv::Mat& labels, const FaceFrame& frame) : labels_(labels), frame_(frame) {}

  bool inside(int label, double u, double v) const {
    const cv::Point2d p = frame_.to_image({u, v});
    const int x = static_cast<int>(std::lround(p.x)), y = static_cast<int>(std::lround(p.y));
    if (x < 0 || y < 0 || x >= labels_.cols || y >= labels_.rows) return false;
    return labels_.at<int>(y, x) == label;
  }

  // Vertical (face-frame) extent of a blob at column u, searched within
  // [v_lo, v_hi]. Boundaries sit halfway between the last outside and first
  // inside sample.
  std::optional<std::pair<double, double>> vertical_extent(int label, double u, double v_lo,
                                                           double v_hi) const {
    constexpr double kStep = 0.25;
    std::optional<double> first, last;
    for (double v = v_lo; v <= v_hi; v += kStep) {
      if (inside(label, u, v)) {
        if (!first) first = v - kStep / 2;
        last = v + kStep / 2;
      }
    }
    if (!first) return std::nullopt;
    return std::make_pair(*first, *last);
  }

 private:
  const cv::Mat& labels_;
  const FaceFrame& frame_;
};

void measure_blobs(std::vector<Blob>& blobs, const cv::Mat& labels, const FaceFrame& frame) {
  for (auto& b : blobs) {
    b.u_min = 1e9;
    b.u_max = -1e9;
    b.face_centroid = frame.to_face(b.image_centroid);
  }
  for (int y = 0; y < labels.rows; ++y) {
    const int* row = labels.ptr<int>(y);
    for (int x = 0; x < labels.cols; ++x) {
      if (row[x] == 0) continue;
      for (auto& b : blobs) {
        if (b.label != row[x]) continue;
        const double u = frame.to_face({static_cast<double>(x), static_cast<double>(y)}).x;
        b.u_min = std::min(b.u_min, u - 0.5);
        b.u_max = std::max(b.u_max, u + 0.5);
      }
    }
  }
}

}  // namespace

std::optional<Shape68> ChromaLandmarkDetector::detect(const cv::Mat& rgb) const {
  if (rgb.empty() || rgb.type() != CV_8UC3) return std::nullopt;
  cv::Mat skin(rgb.size(), CV_8U);
  for (int y = 0; y < rgb.rows; ++y) {
    const cv::Vec3b* src = rgb.ptr<cv::Vec3b>(y);
    uchar* dst = skin.ptr<uchar>(y);
    for (int x = 0; x < rgb.cols; ++x) dst[x] = is_skin(src[x]) ? 255 : 0;
  }
  cv::morphologyEx(skin, skin, cv::MORPH_OPEN,
                   cv::getStructuringElement(cv::MORPH_CROSS, cv::Size(3, 3)));

  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(skin, labels, stats, centroids, 8, CV_32S);
  int best = 0, best_area = 0;
  for (int i = 1; i < n; ++i) {
    const int area = stats.at<int>(i, cv::CC_STAT_AREA);
    if (area > best_area) best = i, best_area = area;
  }
  const double min_area = std::max(150.0, 0.004 * rgb.rows * rgb.cols);
  if (best == 0 || best_area < min_area) return std::nullopt;

  // face region = skin component with its interior holes filled
  cv::Mat component = labels == best;
  cv::Mat padded;
  cv::copyMakeBorder(component, padded, 1, 1, 1, 1, cv::BORDER_CONSTANT, 0);
  cv::floodFill(padded, cv::Point(0, 0), 128);
  cv::Mat holes = padded(cv::Rect(1, 1, rgb.cols, rgb.rows)) == 0;
  cv::Mat region = component | holes;

  const cv::Moments m = cv::moments(region, true);
  if (m.m00 < min_area) return std::nullopt;
  FaceFrame frame;
  frame.center = {m.m10 / m.m00, m.m01 / m.m00};
  const double cxx = m.mu20 / m.m00, cyy = m.mu02 / m.m00, cxy = m.mu11 / m.m00;
  // major axis is the face's vertical; orient it so "down" points down
  const double major = 0.5 * std::atan2(2 * cxy, cxx - cyy);
  cv::Point2d down(std::cos(major), std::sin(major));
  if (std::abs(down.y) < std::abs(down.x)) down = {-down.y, down.x};
  if (down.y < 0) down = -down;
  frame.roll = std::atan2(-down.x, down.y);

  cv::Mat hole_labels, hole_stats, hole_centroids;
  const int hn = cv::connectedComponentsWithStats(holes, hole_labels, hole_stats, hole_centroids, 8,
                                                  CV_32S);
  const double min_hole = std::max(4.0, 0.0015 * m.m00);
  std::vector<Blob> blobs;
  for (int i = 1; i < hn; ++i) {
    const int area = hole_stats.at<int>(i, cv::CC_STAT_AREA);
    if (area < min_hole) continue;
    Blob b;
    b.label = i;
    b.area = area;
    b.image_centroid = {hole_centroids.at<double>(i, 0), hole_centroids.at<double>(i, 1)};
    blobs.push_back(b);
  }

  auto variance_along = [&](double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return c * c * cxx + s * s * cyy + 2 * c * s * cxy;
  };

  const Blob* eye[2] = {nullptr, nullptr};
  const Blob* brow[2] = {nullptr, nullptr};
  const Blob* mouth = nullptr;
  double half_h = 0;
  // two passes: the second uses the roll refined from the eye line
  for (int pass = 0; pass < 2; ++pass) {
    for (auto& b : blobs) b.face_centroid = frame.to_face(b.image_centroid);
    half_h = 2.0 * std::sqrt(variance_along(frame.roll + CV_PI / 2));
    eye[0] = eye[1] = brow[0] = brow[1] = nullptr;
    mouth = nullptr;
    for (const auto& b : blobs) {
      const cv::Point2d q = b.face_centroid;
      if (q.y > 0.15 * half_h) {
        if (!mouth || b.area > mouth->area) mouth = &b;
        continue;
      }
      if (q.y > 0.05 * half_h) continue;
      const int side = q.x < 0 ? 0 : 1;
      // the eye is the lowest sizeable upper blob on each side
      if (!eye[side] || q.y > eye[side]->face_centroid.y) eye[side] = &b;
    }
    for (const auto& b : blobs) {
      const cv::Point2d q = b.face_centroid;
      const int side = q.x < 0 ? 0 : 1;
      if (!eye[side] || &b == eye[side] || q.y >= eye[side]->face_centroid.y) continue;
      if (std::abs(q.x - eye[side]->face_centroid.x) > 0.5 * half_h) continue;
      if (!brow[side] || b.area > brow[side]->area) brow[side] = &b;
    }
    if (!eye[0] || !eye[1] || !mouth) return std::nullopt;
    if (pass == 0) {
      const cv::Point2d d = eye[1]->image_centroid - eye[0]->image_centroid;
      frame.roll = std::atan2(d.y, d.x);
    }
  }
  measure_blobs(blobs, hole_labels, frame);

  const double half_w = 2.0 * std::sqrt(variance_along(frame.roll));
  half_h = 2.0 * std::sqrt(variance_along(frame.roll + CV_PI / 2));
  const BlobScanner scan(hole_labels, frame);
  Shape68 face{};  // face-frame coordinates (pixels)

  for (int j = 0; j < 17; ++j) {
    const double theta = CV_PI - j * CV_PI / 16.0;
    face[j] = {half_w * std::cos(theta), half_h * std::sin(theta)};
  }

  // eyes
  double eye_v[2] = {0, 0};
  for (int side = 0; side < 2; ++side) {
    const Blob& b = *eye[side];
    const double uc = 0.5 * (b.u_min + b.u_max), ew = 0.5 * (b.u_max - b.u_min);
    const double v0 = b.face_centroid.y;
    const double search = std::max(4.0, 0.25 * half_h);
    double top[2], bottom[2];
    const double cols[2] = {uc - ew / 3, uc + ew / 3};
    for (int k = 0; k < 2; ++k) {
      auto ext = scan.vertical_extent(b.label, cols[k], v0 - search, v0 + search);
      if (!ext) ext = std::make_pair(v0, v0);
      top[k] = ext->first;
      bottom[k] = ext->second;
    }
    const double vc = 0.25 * (top[0] + top[1] + bottom[0] + bottom[1]);
    eye_v[side] = vc;
    const int base = side == 0 ? lm::kLeftEyeBegin : lm::kRightEyeBegin;
    face[base + 0] = {b.u_min, vc};
    face[base + 1] = {cols[0], top[0]};
    face[base + 2] = {cols[1], top[1]};
    face[base + 3] = {b.u_max, vc};
    face[base + 4] = {cols[1], bottom[1]};
    face[base + 5] = {cols[0], bottom[0]};
  }

  // brows; fall back to an offset above the eye when a brow is not separable
  for (int side = 0; side < 2; ++side) {
    const int base = side == 0 ? 17 : 22;
    if (brow[side]) {
      const Blob& b = *brow[side];
      const double length = std::max(1.0, b.u_max - b.u_min);
      const double thickness = std::clamp(b.area / length, 1.0, 0.5 * length);
      const double u0 = b.u_min + thickness / 2, u1 = b.u_max - thickness / 2;
      const double v0 = b.face_centroid.y;
      for (int k = 0; k < 5; ++k) {
        const double u = u0 + k / 4.0 * (u1 - u0);
        auto ext = scan.vertical_extent(b.label, u, v0 - 3 * thickness, v0 + 3 * thickness);
        face[base + k] = {u, ext ? 0.5 * (ext->first + ext->second) : v0};
      }
    } else {
      const Blob& e = *eye[side];
      const double uc = 0.5 * (e.u_min + e.u_max);
      const double start = side == 0 ? -0.22 : -0.18;
      for (int k = 0; k < 5; ++k)
        face[base + k] = {uc + (start + 0.10 * k) * half_w, eye_v[side] - 0.25 * half_w};
    }
  }

  // mouth: outer contour from the lip+interior blob, inner from its dark core
  const Blob& mb = *mouth;
  const double mu_c = 0.5 * (mb.u_min + mb.u_max), mw = 0.5 * (mb.u_max - mb.u_min);
  const double mv0 = mb.face_centroid.y;
  const double msearch = std::max(6.0, 0.4 * half_h);
  auto mouth_extent = [&](double u) {
    auto ext = scan.vertical_extent(mb.label, u, mv0 - msearch, mv0 + msearch);
    return ext ? *ext : std::make_pair(mv0, mv0);
  };
  auto dark_extent = [&](double u, double v_lo, double v_hi) -> std::optional<std::pair<double, double>> {
    std::optional<double> first, last;
    for (double v = v_lo; v <= v_hi; v += 0.25) {
      if (!scan.inside(mb.label, u, v)) continue;
      const cv::Point2d p = frame.to_image({u, v});
      const cv::Vec3b px = rgb.at<cv::Vec3b>(static_cast<int>(std::lround(p.y)),
                                             static_cast<int>(std::lround(p.x)));
      if (px[0] + px[1] + px[2] < 200) {
        if (!first) first = v - 0.125;
        last = v + 0.125;
      }
    }
    if (!first) return std::nullopt;
    return std::make_pair(*first, *last);
  };
  const auto left_corner = mouth_extent(mb.u_min + 1.0);
  const auto right_corner = mouth_extent(mb.u_max - 1.0);
  const double lv = 0.5 * (left_corner.first + left_corner.second);
  const double rv = 0.5 * (right_corner.first + right_corner.second);
  face[48] = {mb.u_min, lv};
  face[54] = {mb.u_max, rv};
  const double fr[5] = {-2.0 / 3, -1.0 / 3, 0.0, 1.0 / 3, 2.0 / 3};
  for (int k = 0; k < 5; ++k) {
    const double ut = mu_c + fr[k] * mw;
    face[49 + k] = {ut, mouth_extent(ut).first};
    const double ub = mu_c - fr[k] * mw;
    face[55 + k] = {ub, mouth_extent(ub).second};
  }
  const auto centre = mouth_extent(mu_c);
  const double mid_v = 0.5 * (centre.first + centre.second);
  face[60] = {mu_c - 0.8 * mw, mid_v + 0.8 * (lv - mid_v)};
  face[64] = {mu_c + 0.8 * mw, mid_v + 0.8 * (rv - mid_v)};
  for (int k = 0; k < 3; ++k) {
    const double u = mu_c + (k - 1) / 3.0 * mw;
    const auto outer = mouth_extent(u);
    const auto dark = dark_extent(u, outer.first, outer.second);
    const double m = 0.5 * (outer.first + outer.second);
    face[61 + k] = {u, dark ? dark->first : m};
    const double ub = mu_c - (k - 1) / 3.0 * mw;
    const auto outer_b = mouth_extent(ub);
    const auto dark_b = dark_extent(ub, outer_b.first, outer_b.second);
    face[65 + k] = {ub, dark_b ? dark_b->second : 0.5 * (outer_b.first + outer_b.second)};
  }

  // nose from fixed proportions between the eye line and the mouth
  const double ev = 0.5 * (eye_v[0] + eye_v[1]);
  const double tip = ev + 0.6 * (mid_v - ev);
  for (int k = 0; k < 4; ++k) face[27 + k] = {0.0, ev + k / 3.0 * (tip - ev)};
  const double nw = 0.14 * half_w;
  const double nx[5] = {-nw, -nw / 2, 0.0, nw / 2, nw};
  for (int k = 0; k < 5; ++k) face[31 + k] = {nx[k], tip + (k == 2 ? 0.08 : 0.06) * half_w};

  Shape68 out{};
  for (int i = 0; i < kLandmarkCount; ++i) out[i] = frame.to_image(face[i]);
  clamp_to_frame(out, rgb.cols, rgb.rows);
  return out;
}

std::unique_ptr<LandmarkDetector> make_landmark_detector(const std::string& backend) {
  if (backend == "chroma-blob-v1" || backend == "chroma" || backend == "default")
    return std::make_unique<ChromaLandmarkDetector>();
  throw Error(ErrorKind::Config, "unknown landmark backend: " + backend);
}

// ---------------------------------------------------------------------------

LandmarkTrack fill_detection_gaps(const std::vector<std::optional<Shape68>>& detections) {
  const int n = static_cast<int>(detections.size());
  std::vector<int> found;
  for (int i = 0; i < n; ++i)
    if (detections[i]) found.push_back(i);
  if (found.empty()) throw Error(ErrorKind::NoFace, "no face detected in any frame");

  std::vector<int> missing;
  int run = 0;
  std::string long_runs;
  for (int i = 0; i <= n; ++i) {
    if (i < n && !detections[i]) {
      ++run;
      continue;
    }
    if (run > kMaxInterpolatedGap) {
      long_runs += (long_runs.empty() ? "" : ", ") + std::to_string(i - run) + "-" + std::to_string(i - 1);
    }
    run = 0;
  }
  if (!long_runs.empty())
    throw Error(ErrorKind::DetectionGap,
                "undetected runs longer than " + std::to_string(kMaxInterpolatedGap) +
                    " frames at frames " + long_runs);

  LandmarkTrack track;
  track.points.resize(n);
  track.confidence.assign(n, 0.0f);
  for (int i = 0; i < n; ++i) {
    if (detections[i]) {
      track.points[i] = *detections[i];
      track.confidence[i] = 1.0f;
      continue;
    }
    const auto next = std::lower_bound(found.begin(), found.end(), i);
    const int after = next == found.end() ? -1 : *next;
    const int before = next == found.begin() ? -1 : *(next - 1);
    if (before < 0) {
      track.points[i] = *detections[after];
    } else if (after < 0) {
      track.points[i] = *detections[before];
    } else {
      const double t = static_cast<double>(i - before) / (after - before);
      for (int k = 0; k < kLandmarkCount; ++k)
        track.points[i][k] = (*detections[before])[k] * (1 - t) + (*detections[after])[k] * t;
    }
  }
  return track;
}

LandmarkTrack detect_landmarks(const FrameSequence& video, const LandmarkDetector& detector) {
  if (video.empty()) throw Error(ErrorKind::EmptyVideo, "detect_landmarks: empty video");
  std::vector<std::optional<Shape68>> detections;
  detections.reserve(video.size());
  for (const auto& frame : video) detections.push_back(detector.detect(frame));
  LandmarkTrack track = fill_detection_gaps(detections);
  for (auto& s : track.points) clamp_to_frame(s, video.width(), video.height());
  return track;
}

// ---------------------------------------------------------------------------
// cache files

namespace {
constexpr char kCacheMagic[8] = {'V', '2', 'V', 'L', 'M', 'K', '0', '1'};
}

void write_landmark_cache(const LandmarkTrack& track, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write landmark cache " + path.string());
  out.write(kCacheMagic, sizeof(kCacheMagic));
  const std::uint32_t n = static_cast<std::uint32_t>(track.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  for (const auto& s : track.points)
    for (const auto& p : s) {
      const float xy[2] = {static_cast<float>(p.x), static_cast<float>(p.y)};
      out.write(reinterpret_cast<const char*>(xy), sizeof(xy));
    }
  out.write(reinterpret_cast<const char*>(track.confidence.data()),
            static_cast<std::streamsize>(track.confidence.size() * sizeof(float)));
  if (!out) throw Error(ErrorKind::Io, "short write to landmark cache " + path.string());
}

LandmarkTrack read_landmark_cache(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open landmark cache " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0)
    throw Error(ErrorKind::Version, "not a landmark cache (bad magic): " + path.string());
  std::uint32_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  LandmarkTrack track;
  track.points.resize(n);
  for (auto& s : track.points)
    for (auto& p : s) {
      float xy[2];
      in.read(reinterpret_cast<char*>(xy), sizeof(xy));
      p = {xy[0], xy[1]};
    }
  track.confidence.resize(n);
  in.read(reinterpret_cast<char*>(track.confidence.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!in) throw Error(ErrorKind::Decode, "truncated landmark cache " + path.string());
  return track;
}

std::string video_content_hash(const fs::path& path) {
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot read " + f.string());
    const std::string name = f.filename().string();
    if (files.size() > 1) EVP_DigestUpdate(ctx.get(), name.data(), name.size());
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

}  // namespace v2v
