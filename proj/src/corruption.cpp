#include "v2v/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

#include "v2v/error.hpp"
#include "v2v/geometry.hpp"

namespace v2v {
namespace {

// Portable uniform [0, 1) from 53 random bits.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double draw(std::mt19937_64& rng, const Interval& iv) { return iv.lo + iv.width() * unit(rng); }

// Symmetric jitter bounded by fraction * width / 2.
double jitter(std::mt19937_64& rng, const Interval& iv, double fraction) {
  return (2.0 * unit(rng) - 1.0) * 0.5 * fraction * iv.width();
}

void check_interval(const Interval& iv, const char* name) {
  if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi))
    throw Error(ErrorKind::Config, std::string("corruption.") + name + " must be finite");
  if (iv.lo > iv.hi)
    throw Error(ErrorKind::Config, std::string("corruption.") + name + " has lo > hi");
}

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

void CorruptionSpec::validate() const {
  check_interval(rotation_deg, "rotation_deg");
  check_interval(translation, "translation");
  check_interval(scale, "scale");
  check_interval(brightness, "brightness");
  check_interval(contrast, "contrast");
  check_interval(saturation, "saturation");
  check_interval(hue_deg, "hue_deg");
  check_interval(barrel_k, "barrel_k");
  check_interval(mustache_k1, "mustache_k1");
  check_interval(mustache_k2, "mustache_k2");
  if (!(scale.lo > 0)) throw Error(ErrorKind::Config, "corruption.scale must be strictly positive");
  if (!(contrast.lo >= 0) || !(saturation.lo >= 0))
    throw Error(ErrorKind::Config, "corruption contrast/saturation must be non-negative");
  if (!(per_frame_jitter >= 0.0 && per_frame_jitter <= 1.0))
    throw Error(ErrorKind::Config, "corruption.per_frame_jitter must lie in [0, 1]");
  if (!(mustache_probability >= 0.0 && mustache_probability <= 1.0))
    throw Error(ErrorKind::Config, "corruption.mustache_probability must lie in [0, 1]");
}

CorruptionSpec CorruptionSpec::identity() {
  CorruptionSpec s;
  s.rotation_deg = {0, 0};
  s.translation = {0, 0};
  s.scale = {1, 1};
  s.brightness = {0, 0};
  s.contrast = {1, 1};
  s.saturation = {1, 1};
  s.hue_deg = {0, 0};
  s.barrel_k = {0, 0};
  s.mustache_k1 = {0, 0};
  s.mustache_k2 = {0, 0};
  return s;
}

namespace {
nlohmann::json interval_json(const Interval& iv) { return nlohmann::json::array({iv.lo, iv.hi}); }
Interval interval_from(const nlohmann::json& j, const char* name) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw Error(ErrorKind::Config, std::string("corruption.") + name + " must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}
}  // namespace

void to_json(nlohmann::json& j, const CorruptionSpec& s) {
  j = nlohmann::json{{"rotation_deg", interval_json(s.rotation_deg)},
                     {"translation", interval_json(s.translation)},
                     {"scale", interval_json(s.scale)},
                     {"brightness", interval_json(s.brightness)},
                     {"contrast", interval_json(s.contrast)},
                     {"saturation", interval_json(s.saturation)},
                     {"hue_deg", interval_json(s.hue_deg)},
                     {"barrel_k", interval_json(s.barrel_k)},
                     {"mustache_k1", interval_json(s.mustache_k1)},
                     {"mustache_k2", interval_json(s.mustache_k2)},
                     {"mustache_probability", s.mustache_probability},
                     {"per_frame_jitter", s.per_frame_jitter},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, CorruptionSpec& s) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "corruption must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "rotation_deg") s.rotation_deg = interval_from(value, "rotation_deg");
    else if (key == "translation") s.translation = interval_from(value, "translation");
    else if (key == "scale") s.scale = interval_from(value, "scale");
    else if (key == "brightness") s.brightness = interval_from(value, "brightness");
    else if (key == "contrast") s.contrast = interval_from(value, "contrast");
    else if (key == "saturation") s.saturation = interval_from(value, "saturation");
    else if (key == "hue_deg") s.hue_deg = interval_from(value, "hue_deg");
    else if (key == "barrel_k") s.barrel_k = interval_from(value, "barrel_k");
    else if (key == "mustache_k1") s.mustache_k1 = interval_from(value, "mustache_k1");
    else if (key == "mustache_k2") s.mustache_k2 = interval_from(value, "mustache_k2");
    else if (key == "mustache_probability") s.mustache_probability = value.get<double>();
    else if (key == "per_frame_jitter") s.per_frame_jitter = value.get<double>();
    else if (key == "seed") s.seed = value.get<std::uint64_t>();
    else throw Error(ErrorKind::Config, "unknown key corruption." + key);
  }
}

CorruptionSample sample_corruption(const CorruptionSpec& spec, int n_frames, std::uint64_t rng_seed) {
  if (n_frames < 1) throw Error(ErrorKind::Length, "sample_corruption: n_frames must be >= 1");
  spec.validate();
  std::mt19937_64 rng(rng_seed);
  CorruptionSample s;
  s.rotation_deg = draw(rng, spec.rotation_deg);
  s.translation = {draw(rng, spec.translation), draw(rng, spec.translation)};
  s.scale = draw(rng, spec.scale);
  s.color.brightness = 255.0 * draw(rng, spec.brightness);
  s.color.contrast = draw(rng, spec.contrast);
  s.color.saturation = draw(rng, spec.saturation);
  s.color.hue_deg = draw(rng, spec.hue_deg);
  const bool mustache = unit(rng) < spec.mustache_probability;
  // Rejection sampling: the default ranges contain non-invertible corners
  // (e.g. k1 = 0, k2 = -0.25), which are redrawn.
  constexpr int kMaxDraws = 1000;
  int tries = 0;
  for (;; ++tries) {
    const double k = draw(rng, spec.barrel_k);
    const double k1 = draw(rng, spec.mustache_k1);
    const double k2 = draw(rng, spec.mustache_k2);
    s.k = mustache ? 0.0 : k;
    s.k1 = mustache ? k1 : 0.0;
    s.k2 = mustache ? k2 : 0.0;
    if (RadialDistortion{s.k, s.k1, s.k2}.is_monotone()) break;
    if (tries == kMaxDraws)
      throw Error(ErrorKind::Config, "corruption distortion ranges admit no invertible radial map");
  }
  s.per_frame.resize(static_cast<std::size_t>(n_frames));
  for (auto& j : s.per_frame) {
    j.rotation_deg = jitter(rng, spec.rotation_deg, spec.per_frame_jitter);
    j.translation = {jitter(rng, spec.translation, spec.per_frame_jitter),
                     jitter(rng, spec.translation, spec.per_frame_jitter)};
    j.scale = jitter(rng, spec.scale, spec.per_frame_jitter);
  }
  return s;
}

// ---------------------------------------------------------------------------

double RadialDistortion::forward(double r) const {
  const double r2 = r * r;
  return r * (1.0 + k * r2 + k1 * r2 + k2 * r2 * r2);
}

double RadialDistortion::derivative(double r) const {
  const double r2 = r * r;
  return 1.0 + 3.0 * (k + k1) * r2 + 5.0 * k2 * r2 * r2;
}

bool RadialDistortion::is_monotone() const {
  // quadratic in r^2; check the endpoints and the interior stationary point
  constexpr int kSamples = 2048;
  for (int i = 0; i <= kSamples; ++i)
    if (!(derivative(static_cast<double>(i) / kSamples) > 0.0)) return false;
  if (k2 != 0.0) {
    const double s = -3.0 * (k + k1) / (10.0 * k2);
    if (s >= 0.0 && s <= 1.0 && !(derivative(std::sqrt(s)) > 0.0)) return false;
  }
  return true;
}

double RadialDistortion::inverse(double r_d) const {
  if (is_identity() || r_d <= 0.0) return r_d;
  const double edge = forward(1.0);
  if (r_d > edge) return 1.0 + (r_d - edge);  // outside the sampled disk
  double lo = 0.0, hi = 1.0, r = std::clamp(r_d, 0.0, 1.0);
  for (int it = 0; it < 60; ++it) {
    const double f = forward(r) - r_d;
    if (std::abs(f) < 1e-13) break;
    if (f > 0) hi = r; else lo = r;
    const double step = r - f / derivative(r);
    r = (step > lo && step < hi) ? step : 0.5 * (lo + hi);
  }
  return r;
}

cv::Mat radial_distort(const cv::Mat& frame, double k, double k1, double k2) {
  const RadialDistortion model{k, k1, k2};
  if (!model.is_monotone())
    throw Error(ErrorKind::DistortionParameter, "radial map is not monotone on [0, 1]");
  if (model.is_identity()) return frame.clone();
  const double cx = 0.5 * (frame.cols - 1), cy = 0.5 * (frame.rows - 1);
  const double norm = std::max(1e-9, std::hypot(cx, cy));
  cv::Mat map_x(frame.size(), CV_32F), map_y(frame.size(), CV_32F);
  for (int y = 0; y < frame.rows; ++y) {
    float* mx = map_x.ptr<float>(y);
    float* my = map_y.ptr<float>(y);
    for (int x = 0; x < frame.cols; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double r_d = std::hypot(dx, dy) / norm;
      const double ratio = r_d > 0 ? model.inverse(r_d) / r_d : 1.0;
      mx[x] = static_cast<float>(cx + dx * ratio);
      my[x] = static_cast<float>(cy + dy * ratio);
    }
  }
  cv::Mat out;
  cv::remap(frame, out, map_x, map_y, cv::INTER_LINEAR, cv::BORDER_CONSTANT, cv::Scalar::all(0));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

cv::Mat perturb_float(const cv::Mat& rgb_f, const ColorDeltas& d, const cv::Mat& weights) {
  cv::Mat img = rgb_f.clone();  // CV_32FC3, 0..255
  if (d.brightness != 0.0) img += cv::Scalar::all(d.brightness);
  if (d.contrast != 1.0) {
    const cv::Scalar mean = weights.empty() ? cv::mean(img) : cv::mean(img, weights > 0.5f);
    img = (img - mean) * d.contrast + mean;
  }
  if (d.saturation != 1.0 || d.hue_deg != 0.0) {
    cv::Mat clamped, hsv;
    cv::min(cv::max(img, 0.0), 255.0, clamped);
    clamped *= 1.0 / 255.0;
    cv::cvtColor(clamped, hsv, cv::COLOR_RGB2HSV);  // H in degrees, S/V in [0, 1]
    for (int y = 0; y < hsv.rows; ++y) {
      cv::Vec3f* p = hsv.ptr<cv::Vec3f>(y);
      for (int x = 0; x < hsv.cols; ++x) {
        float h = p[x][0] + static_cast<float>(d.hue_deg);
        h = std::fmod(h, 360.0f);
        if (h < 0) h += 360.0f;
        p[x][0] = h;
        p[x][1] = std::clamp(p[x][1] * static_cast<float>(d.saturation), 0.0f, 1.0f);
      }
    }
    cv::cvtColor(hsv, img, cv::COLOR_HSV2RGB);
    img *= 255.0;
  }
  return img;
}

}  // namespace

cv::Mat color_perturb(const cv::Mat& frame, const ColorDeltas& deltas) {
  if (deltas.is_identity()) return frame.clone();
  cv::Mat f, out;
  frame.convertTo(f, CV_32FC3);
  perturb_float(f, deltas, cv::Mat()).convertTo(out, CV_8UC3);
  return out;
}

cv::Mat color_perturb(const cv::Mat& frame, const ColorDeltas& deltas, const cv::Mat& mask) {
  if (deltas.is_identity()) return frame.clone();
  cv::Mat f;
  frame.convertTo(f, CV_32FC3);
  // un-premultiply inside the support so colour math sees true pixel values
  for (int y = 0; y < f.rows; ++y) {
    cv::Vec3f* p = f.ptr<cv::Vec3f>(y);
    const float* m = mask.ptr<float>(y);
    for (int x = 0; x < f.cols; ++x)
      if (m[x] > 1e-3f) p[x] /= m[x];
  }
  cv::Mat img = perturb_float(f, deltas, mask);
  cv::Mat out(frame.size(), CV_8UC3);
  for (int y = 0; y < f.rows; ++y) {
    const cv::Vec3f* p = img.ptr<cv::Vec3f>(y);
    const float* m = mask.ptr<float>(y);
    cv::Vec3b* o = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < f.cols; ++x)
      for (int c = 0; c < 3; ++c)
        o[x][c] = cv::saturate_cast<uchar>(std::clamp(p[x][c], 0.0f, 255.0f) * m[x]);
  }
  return out;
}

CorruptedForeground apply_corruption(const FrameSequence& fg, const std::vector<cv::Mat>& masks,
                                     const CorruptionSample& sample) {
  if (masks.size() != fg.size()) throw Error(ErrorKind::Length, "apply_corruption: mask count differs");
  if (!sample.per_frame.empty() && sample.per_frame.size() != fg.size())
    throw Error(ErrorKind::Length, "apply_corruption: sample has a different frame count");
  const RadialDistortion radial{sample.k, sample.k1, sample.k2};
  if (!radial.is_monotone())
    throw Error(ErrorKind::DistortionParameter, "radial map is not monotone on [0, 1]");

  std::vector<cv::Mat> frames, out_masks;
  const cv::Point2d center(0.5 * (fg.width() - 1), 0.5 * (fg.height() - 1));
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const PoseJitter j = sample.per_frame.empty() ? PoseJitter{} : sample.per_frame[i];
    const double rot = (sample.rotation_deg + j.rotation_deg) * kDeg;
    const double scale = sample.scale + j.scale;
    const cv::Point2d shift = (sample.translation + j.translation) * static_cast<double>(fg.width());
    cv::Mat img = fg[i], mask = masks[i];
    if (rot != 0.0 || scale != 1.0 || shift != cv::Point2d(0, 0)) {
      const AffineParams t = AffineParams::about_center(rot, scale, shift, center);
      img = warp_similarity(img, t);
      mask = warp_similarity(mask, t);
    }
    if (!radial.is_identity()) {
      img = radial_distort(img, sample.k, sample.k1, sample.k2);
      mask = radial_distort(mask, sample.k, sample.k1, sample.k2);
    }
    if (!sample.color.is_identity()) img = color_perturb(img, sample.color, mask);
    frames.push_back(img.data == fg[i].data ? img.clone() : img);
    out_masks.push_back(mask.data == masks[i].data ? mask.clone() : mask);
  }
  return {FrameSequence(std::move(frames), fg.fps()), std::move(out_masks)};
}

FrameSequence apply_corruption(const FrameSequence& fg, const CorruptionSample& sample) {
  std::vector<cv::Mat> masks;
  for (const auto& f : fg) {
    cv::Mat gray, m;
    cv::cvtColor(f, gray, cv::COLOR_RGB2GRAY);
    cv::Mat support = gray > 0;
    support.convertTo(m, CV_32F, 1.0 / 255.0);
    masks.push_back(m);
  }
  return apply_corruption(fg, masks, sample).frames;
}

}  // namespace v2v
