#include "v2v/synthetic_face.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

namespace v2v {
namespace {

constexpr int kShift = 4;  // sub-pixel bits for OpenCV drawing
constexpr double kSubpixel = 1 << kShift;

cv::Point to_fixed(const cv::Point2d& p) {
  return {static_cast<int>(std::lround(p.x * kSubpixel)),
          static_cast<int>(std::lround(p.y * kSubpixel))};
}

cv::Scalar rgb(const cv::Vec3b& c) { return cv::Scalar(c[0], c[1], c[2]); }

cv::Vec3b scaled(const cv::Vec3b& c, double f) {
  return cv::Vec3b(cv::saturate_cast<uchar>(c[0] * f), cv::saturate_cast<uchar>(c[1] * f),
                   cv::saturate_cast<uchar>(c[2] * f));
}

std::vector<cv::Point> fixed_polygon(const Shape68& s, std::initializer_list<int> idx) {
  std::vector<cv::Point> out;
  for (int i : idx) out.push_back(to_fixed(s[i]));
  return out;
}

bool skin_like(const cv::Vec3b& p) { return p[0] > p[1] + 8 && p[1] > p[2] + 5 && p[0] > 70; }

}  // namespace

Shape68 canonical_landmarks(const FaceIdentity& id, const FaceExpression& ex) {
  Shape68 s{};
  const double b = id.aspect;
  for (int j = 0; j < 17; ++j) {
    const double theta = std::numbers::pi - j * std::numbers::pi / 16.0;
    s[j] = {std::cos(theta), b * std::sin(theta)};
  }

  const double brow_y = id.eye_y - id.brow_gap - ex.brow_raise;
  for (int k = 0; k < 5; ++k) {
    const double t = k / 4.0;
    const double arch = 0.04 * std::sin(std::numbers::pi * t);
    // left brow runs outer -> inner, right brow inner -> outer
    s[17 + k] = {-(id.eye_spacing + 0.22) + t * 0.40, brow_y - arch};
    s[22 + k] = {(id.eye_spacing - 0.18) + t * 0.40, brow_y - 0.04 * std::sin(std::numbers::pi * t)};
  }

  const double tip = id.eye_y + 0.6 * (id.mouth_y - id.eye_y);
  for (int k = 0; k < 4; ++k) s[27 + k] = {0.0, id.eye_y + k / 3.0 * (tip - id.eye_y)};
  const double nw = id.nose_half_width;
  const double nx[5] = {-nw, -nw / 2, 0.0, nw / 2, nw};
  for (int k = 0; k < 5; ++k) s[31 + k] = {nx[k], tip + (k == 2 ? 0.08 : 0.06)};

  const double open = 1.0 - std::clamp(ex.blink, 0.0, 0.9);
  const double ew = id.eye_half_width;
  const double eh = id.eye_half_height * open;
  const double ly = id.eye_y;
  const double lx = -id.eye_spacing, rx = id.eye_spacing;
  s[36] = {lx - ew, ly};
  s[37] = {lx - ew / 3, ly - eh};
  s[38] = {lx + ew / 3, ly - eh};
  s[39] = {lx + ew, ly};
  s[40] = {lx + ew / 3, ly + eh};
  s[41] = {lx - ew / 3, ly + eh};
  s[42] = {rx - ew, ly};
  s[43] = {rx - ew / 3, ly - eh};
  s[44] = {rx + ew / 3, ly - eh};
  s[45] = {rx + ew, ly};
  s[46] = {rx + ew / 3, ly + eh};
  s[47] = {rx - ew / 3, ly + eh};

  const double my = id.mouth_y;
  const double mw = id.mouth_half_width;
  const double lt = id.lip_thickness;
  const double half_open = std::max(0.0, ex.mouth_open) / 2;
  const double corner_y = my - ex.smile;
  s[48] = {-mw, corner_y};
  s[54] = {mw, corner_y};
  const double upper_x[5] = {-2.0 / 3, -1.0 / 3, 0.0, 1.0 / 3, 2.0 / 3};
  for (int k = 0; k < 5; ++k) {
    const double cupid = (k == 1 || k == 3) ? 0.012 : 0.0;
    s[49 + k] = {upper_x[k] * mw, my - half_open - lt - cupid};
    s[55 + k] = {-upper_x[k] * mw, my + half_open + 1.2 * lt};
  }
  s[60] = {-0.8 * mw, my - 0.8 * ex.smile};
  s[64] = {0.8 * mw, my - 0.8 * ex.smile};
  for (int k = 0; k < 3; ++k) {
    const double x = (k - 1) / 3.0 * mw;
    s[61 + k] = {x, my - half_open};
    s[65 + k] = {-x, my + half_open};
  }
  return s;
}

Shape68 pose_landmarks(const Shape68& canonical, const FacePose& pose) {
  const double c = std::cos(pose.roll), sn = std::sin(pose.roll);
  Shape68 out{};
  for (int i = 0; i < kLandmarkCount; ++i) {
    const cv::Point2d& p = canonical[i];
    out[i] = {pose.center.x + pose.scale * (c * p.x - sn * p.y),
              pose.center.y + pose.scale * (sn * p.x + c * p.y)};
  }
  return out;
}

Shape68 render_face(cv::Mat& canvas, const FaceIdentity& id, const FaceExpression& ex,
                    const FacePose& pose) {
  const Shape68 canon = canonical_landmarks(id, ex);
  const Shape68 s = pose_landmarks(canon, pose);
  const double deg = pose.roll * 180.0 / std::numbers::pi;
  auto map = [&](cv::Point2d p) {
    const double c = std::cos(pose.roll), sn = std::sin(pose.roll);
    return cv::Point2d(pose.center.x + pose.scale * (c * p.x - sn * p.y),
                       pose.center.y + pose.scale * (sn * p.x + c * p.y));
  };
  auto axes = [&](double ax, double ay) {
    return cv::Size(static_cast<int>(std::lround(ax * pose.scale * kSubpixel)),
                    static_cast<int>(std::lround(ay * pose.scale * kSubpixel)));
  };

  // hair behind the head, then the face ellipse on top of it
  cv::ellipse(canvas, to_fixed(map({0.0, -0.28 * id.aspect})), axes(1.14, id.aspect * 0.98), deg, 0,
              360, rgb(id.hair), cv::FILLED, cv::LINE_AA, kShift);
  cv::ellipse(canvas, to_fixed(pose.center), axes(1.0, id.aspect), deg, 0, 360, rgb(id.skin),
              cv::FILLED, cv::LINE_AA, kShift);

  const cv::Scalar nose_shade = rgb(scaled(id.skin, 0.86));
  const std::vector<std::vector<cv::Point>> nose = {fixed_polygon(s, {27, 28, 29, 30}),
                                                     fixed_polygon(s, {31, 32, 33, 34, 35})};
  cv::polylines(canvas, nose, false, nose_shade, std::max(1, static_cast<int>(0.03 * pose.scale)),
                cv::LINE_AA, kShift);

  const int brow_px = std::max(2, static_cast<int>(std::lround(id.brow_thickness * pose.scale)));
  const std::vector<std::vector<cv::Point>> brows = {fixed_polygon(s, {17, 18, 19, 20, 21}),
                                                      fixed_polygon(s, {22, 23, 24, 25, 26})};
  cv::polylines(canvas, brows, false, rgb(id.brows), brow_px, cv::LINE_AA, kShift);

  const std::vector<std::vector<cv::Point>> eyes = {fixed_polygon(s, {36, 37, 38, 39, 40, 41}),
                                                     fixed_polygon(s, {42, 43, 44, 45, 46, 47})};
  cv::fillPoly(canvas, eyes, cv::Scalar(236, 234, 228), cv::LINE_AA, kShift);
  const double iris_r = 0.7 * id.eye_half_height * (1.0 - std::clamp(ex.blink, 0.0, 0.9));
  for (const cv::Point2d& c : {left_eye_center(s), right_eye_center(s)}) {
    cv::circle(canvas, to_fixed(c), static_cast<int>(std::lround(iris_r * pose.scale * kSubpixel)),
               rgb(id.iris), cv::FILLED, cv::LINE_AA, kShift);
  }

  const std::vector<std::vector<cv::Point>> lips = {
      fixed_polygon(s, {48, 49, 50, 51, 52, 53, 54, 55, 56, 57, 58, 59})};
  cv::fillPoly(canvas, lips, rgb(id.lips), cv::LINE_AA, kShift);
  if (ex.mouth_open > 0.01) {
    const std::vector<std::vector<cv::Point>> inner = {
        fixed_polygon(s, {60, 61, 62, 63, 64, 65, 66, 67})};
    cv::fillPoly(canvas, inner, cv::Scalar(48, 16, 22), cv::LINE_AA, kShift);
  }
  return s;
}

FaceIdentity random_identity(std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  static const cv::Vec3b skins[] = {{232, 190, 160}, {224, 172, 140}, {198, 140, 105},
                                    {170, 116, 84},  {142, 94, 66},   {238, 200, 176}};
  static const cv::Vec3b lips[] = {{176, 62, 92}, {150, 50, 78}, {196, 84, 112}, {128, 44, 70}};
  static const cv::Vec3b hairs[] = {{40, 30, 26}, {22, 20, 24}, {60, 44, 54}, {34, 32, 40}};
  FaceIdentity id;
  const cv::Vec3b base = skins[rng() % std::size(skins)];
  const double shade = uni(0.95, 1.04);
  id.skin = scaled(base, shade);
  id.lips = lips[rng() % std::size(lips)];
  id.hair = hairs[rng() % std::size(hairs)];
  id.brows = scaled(cv::Vec3b(52, 36, 30), uni(0.7, 1.1));
  id.iris = scaled(cv::Vec3b(60, 44, 36), uni(0.6, 1.2));
  id.aspect = uni(1.22, 1.42);
  id.eye_spacing = uni(0.38, 0.46);
  id.eye_y = uni(-0.36, -0.28);
  id.eye_half_width = uni(0.13, 0.18);
  id.eye_half_height = uni(0.07, 0.09);
  id.brow_gap = uni(0.21, 0.25);
  id.brow_thickness = uni(0.06, 0.085);
  id.mouth_y = uni(0.56, 0.66);
  id.mouth_half_width = uni(0.28, 0.38);
  id.lip_thickness = uni(0.06, 0.08);
  id.nose_half_width = uni(0.12, 0.16);
  return id;
}

TalkingHead render_talking_head(const FaceIdentity& id, const TalkingHeadOptions& o) {
  std::mt19937_64 rng(o.seed * 0xBF58476D1CE4E5B9ULL + 3);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  // static textured backdrop: cool base colour, stripes, a few soft blobs
  cv::Mat background(o.height, o.width, CV_8UC3);
  const cv::Vec3d base(uni(40, 120), uni(70, 150), uni(120, 210));
  const double fx = uni(0.02, 0.08), fy = uni(0.02, 0.08), phase = uni(0, 6.28);
  for (int y = 0; y < o.height; ++y) {
    for (int x = 0; x < o.width; ++x) {
      const double stripe = 25.0 * std::sin(fx * x + fy * y + phase);
      background.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<uchar>(base[0] + 0.5 * stripe),
                                                 cv::saturate_cast<uchar>(base[1] + stripe),
                                                 cv::saturate_cast<uchar>(base[2] - 0.6 * stripe));
    }
  }
  for (int k = 0; k < 4; ++k) {
    cv::circle(background, cv::Point(static_cast<int>(uni(0, o.width)), static_cast<int>(uni(0, o.height))),
               static_cast<int>(uni(0.05, 0.15) * o.width),
               cv::Scalar(uni(20, 90), uni(80, 200), uni(100, 230)), cv::FILLED, cv::LINE_AA);
  }
  const double base_scale = 0.2 * std::min(o.width, o.height);
  const cv::Point2d base_center(o.width * 0.5 + uni(-0.03, 0.03) * o.width,
                                o.height * 0.48 + uni(-0.03, 0.03) * o.height);
  // shoulders
  const cv::Scalar shirt(uni(20, 70), uni(40, 110), uni(90, 160));
  cv::ellipse(background,
              cv::Point(static_cast<int>(base_center.x),
                        static_cast<int>(base_center.y + base_scale * (id.aspect + 1.6))),
              cv::Size(static_cast<int>(base_scale * 2.0), static_cast<int>(base_scale * 1.2)), 0, 0,
              360, shirt, cv::FILLED, cv::LINE_AA);
  for (int y = 0; y < o.height; ++y)
    for (int x = 0; x < o.width; ++x) {
      cv::Vec3b& p = background.at<cv::Vec3b>(y, x);
      if (skin_like(p)) p[2] = p[1];
    }

  const double two_pi = 2.0 * std::numbers::pi;
  const double sway_f = uni(0.02, 0.05), sway_p = uni(0, two_pi);
  const double bob_f = uni(0.02, 0.05), bob_p = uni(0, two_pi);
  const double roll_f = uni(0.015, 0.04), roll_p = uni(0, two_pi);
  const double zoom_f = uni(0.01, 0.03), zoom_p = uni(0, two_pi);
  const double talk_f = uni(0.08, 0.16) * o.expression_rate, talk_p = uni(0, two_pi);
  const double smile_f = uni(0.01, 0.03), smile_p = uni(0, two_pi);
  const double brow_f = uni(0.02, 0.05), brow_p = uni(0, two_pi);
  const int blink_period = std::max(6, static_cast<int>(uni(18, 40) / std::max(0.25, o.expression_rate)));
  const int blink_offset = static_cast<int>(uni(0, blink_period));
  const double roll_amp = 0.10 * o.pose_motion;
  const double shift_amp = 0.03 * std::min(o.width, o.height) * o.pose_motion;

  cv::RNG noise_rng(o.seed + 1);
  std::vector<cv::Mat> frames;
  LandmarkTrack truth;
  for (int t = 0; t < o.frames; ++t) {
    FacePose pose;
    pose.center = {base_center.x + shift_amp * std::sin(two_pi * sway_f * t + sway_p),
                   base_center.y + 0.6 * shift_amp * std::sin(two_pi * bob_f * t + bob_p)};
    pose.roll = roll_amp * std::sin(two_pi * roll_f * t + roll_p);
    pose.scale = base_scale * (1.0 + 0.04 * o.pose_motion * std::sin(two_pi * zoom_f * t + zoom_p));

    FaceExpression ex;
    ex.mouth_open = std::clamp(0.11 + 0.13 * std::sin(two_pi * talk_f * t + talk_p), 0.0, 0.25);
    ex.smile = 0.015 + 0.035 * std::sin(two_pi * smile_f * t + smile_p);
    ex.brow_raise = 0.04 + 0.04 * std::sin(two_pi * brow_f * t + brow_p);
    const int phase = (t + blink_offset) % blink_period;
    ex.blink = phase == 0 ? 0.4 : (phase == 1 ? 0.2 : 0.0);

    cv::Mat frame = background.clone();
    Shape68 s = render_face(frame, id, ex, pose);
    if (o.noise_sigma > 0) {
      cv::Mat noise(frame.size(), CV_16SC3);
      noise_rng.fill(noise, cv::RNG::NORMAL, 0, o.noise_sigma);
      cv::Mat wide;
      frame.convertTo(wide, CV_16SC3);
      wide += noise;
      wide.convertTo(frame, CV_8UC3);
    }
    clamp_to_frame(s, o.width, o.height);
    frames.push_back(frame);
    truth.points.push_back(s);
    truth.confidence.push_back(1.0f);
  }
  return {FrameSequence(std::move(frames), o.fps), std::move(truth)};
}

}  // namespace v2v
