#include "v2v/metrics.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "v2v/error.hpp"

namespace v2v {

namespace {

// Portable standard normal draws (Box-Muller over 53-bit uniforms).
class Normal {
 public:
  explicit Normal(std::uint64_t seed) : rng_(seed) {}
  double operator()() {
    const double u1 = (static_cast<double>(rng_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

std::string frame_list(const std::vector<std::size_t>& frames) {
  std::ostringstream os;
  for (std::size_t i = 0; i < frames.size(); ++i) os << (i ? "," : "") << frames[i];
  return os.str();
}

constexpr int kPatch = 32;

}  // namespace

// --- backends ------------------------------------------------------------------

ProjectionEmbedder::ProjectionEmbedder(int dim, std::uint64_t seed) : dim_(dim) {
  Normal n(seed);
  projection_.resize(dim, kPatch * kPatch * 3);
  for (int r = 0; r < projection_.rows(); ++r)
    for (int c = 0; c < projection_.cols(); ++c) projection_(r, c) = static_cast<float>(n());
}

Embedding ProjectionEmbedder::embed(const cv::Mat& rgb, const Shape68& lm) const {
  // eyes to fixed patch positions
  const cv::Point2d le = left_eye_center(lm), re = right_eye_center(lm);
  const cv::Point2d dst_l(0.3 * kPatch, 0.35 * kPatch), dst_r(0.7 * kPatch, 0.35 * kPatch);
  const cv::Point2d d_src = re - le, d_dst = dst_r - dst_l;
  const double src_len = std::hypot(d_src.x, d_src.y);
  if (src_len < 1e-6) throw Error(ErrorKind::Geometry, "embedder: coincident eye centres");
  const double scale = std::hypot(d_dst.x, d_dst.y) / src_len;
  const double angle = std::atan2(d_dst.y, d_dst.x) - std::atan2(d_src.y, d_src.x);
  const double a = scale * std::cos(angle), b = scale * std::sin(angle);
  cv::Mat m = (cv::Mat_<double>(2, 3) << a, -b, 0, b, a, 0);
  m.at<double>(0, 2) = dst_l.x - (a * le.x - b * le.y);
  m.at<double>(1, 2) = dst_l.y - (b * le.x + a * le.y);
  cv::Mat patch;
  cv::warpAffine(rgb, patch, m, cv::Size(kPatch, kPatch), cv::INTER_AREA, cv::BORDER_CONSTANT, cv::Scalar::all(0));
  Eigen::VectorXf v(kPatch * kPatch * 3);
  int k = 0;
  for (int y = 0; y < kPatch; ++y)
    for (int x = 0; x < kPatch; ++x)
      for (int c = 0; c < 3; ++c) v(k++) = patch.at<cv::Vec3b>(y, x)[c] / 255.0f - 0.5f;
  Eigen::VectorXf e = projection_ * v;
  const float norm = e.norm();
  if (norm > 0) e /= norm;
  return Embedding(e.data(), e.data() + e.size());
}

ProjectionVideoFeatures::ProjectionVideoFeatures(int dim, std::uint64_t seed) : dim_(dim) {
  Normal n(seed);
  projection_.resize(dim, 3 * 16 * 16 * 3);
  for (int r = 0; r < projection_.rows(); ++r)
    for (int c = 0; c < projection_.cols(); ++c) projection_(r, c) = n() / std::sqrt(static_cast<double>(projection_.cols()));
}

Eigen::VectorXd ProjectionVideoFeatures::features(const FrameSequence& video) const {
  constexpr int kSide = 16, kPer = kSide * kSide * 3;
  std::vector<Eigen::VectorXd> frames;
  for (const auto& f : video) {
    cv::Mat small;
    cv::resize(f, small, cv::Size(kSide, kSide), 0, 0, cv::INTER_AREA);
    Eigen::VectorXd v(kPer);
    int k = 0;
    for (int y = 0; y < kSide; ++y)
      for (int x = 0; x < kSide; ++x)
        for (int c = 0; c < 3; ++c) v(k++) = small.at<cv::Vec3b>(y, x)[c] / 255.0;
    frames.push_back(v);
  }
  const double n = static_cast<double>(frames.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kPer), var = Eigen::VectorXd::Zero(kPer),
                  motion = Eigen::VectorXd::Zero(kPer);
  for (const auto& v : frames) mean += v / n;
  for (const auto& v : frames) var += (v - mean).cwiseAbs2() / n;
  for (std::size_t i = 1; i < frames.size(); ++i) motion += (frames[i] - frames[i - 1]).cwiseAbs() / (n - 1);
  Eigen::VectorXd stacked(3 * kPer);
  stacked << mean, var.cwiseSqrt(), motion;
  // motion statistics carry the temporal-coherence signal; weight them up
  stacked.tail(2 * kPer) *= 4.0;
  return projection_ * stacked;
}

std::unique_ptr<IdentityEmbedder> make_identity_embedder(const std::string& backend) {
  if (backend == "aligned-projection-v1" || backend == "default") return std::make_unique<ProjectionEmbedder>();
  throw Error(ErrorKind::Config, "unknown identity embedding backend: " + backend);
}

std::unique_ptr<VideoFeatureExtractor> make_video_features(const std::string& backend) {
  if (backend == "clip-stats-projection-v1" || backend == "default") return std::make_unique<ProjectionVideoFeatures>();
  throw Error(ErrorKind::Config, "unknown video feature backend: " + backend);
}

// --- embeddings ------------------------------------------------------------------

LandmarkTrack detect_all_frames(const FrameSequence& video, const LandmarkDetector& detector) {
  LandmarkTrack t;
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < video.size(); ++i) {
    auto s = detector.detect(video[i]);
    if (!s) {
      missing.push_back(i);
      continue;
    }
    t.points.push_back(*s);
    t.confidence.push_back(1.0f);
  }
  if (!missing.empty()) throw Error(ErrorKind::Metric, "no face detected in frames " + frame_list(missing));
  return t;
}

std::vector<Embedding> embed_video(const FrameSequence& video, const LandmarkTrack& lms, const IdentityEmbedder& e) {
  if (lms.size() != video.size()) throw Error(ErrorKind::Length, "embed_video: landmark track length differs");
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < video.size(); ++i) out.push_back(e.embed(video[i], lms.points[i]));
  return out;
}

std::vector<Embedding> embed_video(const FrameSequence& video, const LandmarkDetector& d, const IdentityEmbedder& e) {
  return embed_video(video, detect_all_frames(video, d), e);
}

double embedding_distance(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Shape, "embedding dimensions differ");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
  return std::sqrt(s);
}

double cosine_similarity(const Embedding& a, const Embedding& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Shape, "embedding dimensions differ");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0 || bb == 0) throw Error(ErrorKind::Metric, "zero identity embedding");
  return ab / std::sqrt(aa * bb);
}

double spidis(const std::vector<Embedding>& a, const std::vector<Embedding>& b, std::vector<double>* per_frame) {
  if (a.size() != b.size() || a.empty()) throw Error(ErrorKind::Length, "spidis: frame counts differ or are zero");
  double s = 0;
  if (per_frame) per_frame->clear();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = embedding_distance(a[i], b[i]);
    if (per_frame) per_frame->push_back(d);
    s += d;
  }
  return s / static_cast<double>(a.size());
}

double spidis(const FrameSequence& source, const FrameSequence& output, const LandmarkDetector& d,
              const IdentityEmbedder& e) {
  if (source.size() != output.size()) throw Error(ErrorKind::Length, "spidis: frame counts differ");
  return spidis(embed_video(source, d, e), embed_video(output, d, e));
}

// --- lmd -------------------------------------------------------------------------

double interocular_distance(const Shape68& s) {
  const cv::Point2d d = right_eye_center(s) - left_eye_center(s);
  return std::hypot(d.x, d.y);
}

namespace {

double eye_angle(const Shape68& s) {
  const cv::Point2d d = right_eye_center(s) - left_eye_center(s);
  return std::atan2(d.y, d.x);
}

Shape68 rotate_scale_about_centroid(const Shape68& s, double angle, double scale) {
  const cv::Point2d c = centroid(s);
  const double ca = std::cos(angle) * scale, sa = std::sin(angle) * scale;
  Shape68 out;
  for (int k = 0; k < kLandmarkCount; ++k) {
    const cv::Point2d p = s[k] - c;
    out[k] = {ca * p.x - sa * p.y, sa * p.x + ca * p.y};
  }
  return out;
}

}  // namespace

Shape68 mean_face(const std::vector<const LandmarkTrack*>& tracks) {
  Shape68 mean{};
  std::size_t n = 0;
  for (const auto* t : tracks)
    for (const auto& s : t->points) {
      if (interocular_distance(s) < 1e-9) throw Error(ErrorKind::Geometry, "degenerate eye landmarks");
      const Shape68 levelled = rotate_scale_about_centroid(s, -eye_angle(s), 1.0);
      for (int k = 0; k < kLandmarkCount; ++k) mean[k] += levelled[k];
      ++n;
    }
  if (n == 0) throw Error(ErrorKind::Length, "mean_face: no shapes");
  for (auto& p : mean) p *= 1.0 / static_cast<double>(n);
  return mean;
}

Shape68 normalize_shape(const Shape68& s, const Shape68& mean) {
  const double iod = interocular_distance(s), mean_iod = interocular_distance(mean);
  if (iod < 1e-9 || mean_iod < 1e-9) throw Error(ErrorKind::Geometry, "degenerate eye landmarks");
  return rotate_scale_about_centroid(s, eye_angle(mean) - eye_angle(s), mean_iod / iod);
}

double lmd(const LandmarkTrack& a, const LandmarkTrack& b, const Shape68& mean, std::vector<double>* per_frame) {
  if (a.size() != b.size() || a.size() == 0) throw Error(ErrorKind::Length, "lmd: frame counts differ or are zero");
  if (per_frame) per_frame->clear();
  double total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Shape68 na = normalize_shape(a.points[i], mean), nb = normalize_shape(b.points[i], mean);
    double s = 0;
    for (int k = lm::kBrowBegin; k < kLandmarkCount; ++k) s += std::hypot(na[k].x - nb[k].x, na[k].y - nb[k].y);
    s /= kLandmarkCount - lm::kBrowBegin;
    if (per_frame) per_frame->push_back(s);
    total += s;
  }
  return total / static_cast<double>(a.size());
}

double lmd(const LandmarkTrack& a, const LandmarkTrack& b) { return lmd(a, b, mean_face({&a, &b})); }

// --- identity consistency -------------------------------------------------------

namespace {

double adjacent_similarity(const std::vector<Embedding>& e) {
  double s = 0;
  for (std::size_t i = 1; i < e.size(); ++i) s += cosine_similarity(e[i - 1], e[i]);
  return s / static_cast<double>(e.size() - 1);
}

double all_pair_similarity(const std::vector<Embedding>& e) {
  double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j, ++n) s += cosine_similarity(e[i], e[j]);
  return s / static_cast<double>(n);
}

double ratio(double edited, double original) {
  if (!(original > 0)) throw Error(ErrorKind::Metric, "original video has non-positive identity consistency");
  return edited / original;
}

void check_pairable(const std::vector<Embedding>& a, const std::vector<Embedding>& b) {
  if (a.size() != b.size()) throw Error(ErrorKind::Length, "identity consistency: frame counts differ");
  if (a.size() < 2) throw Error(ErrorKind::Length, "identity consistency needs at least 2 frames");
}

}  // namespace

double tl_id(const std::vector<Embedding>& original, const std::vector<Embedding>& edited) {
  check_pairable(original, edited);
  return ratio(adjacent_similarity(edited), adjacent_similarity(original));
}

double tg_id(const std::vector<Embedding>& original, const std::vector<Embedding>& edited) {
  check_pairable(original, edited);
  return ratio(all_pair_similarity(edited), all_pair_similarity(original));
}

double tl_id(const FrameSequence& o, const FrameSequence& e, const LandmarkDetector& d, const IdentityEmbedder& em) {
  return tl_id(embed_video(o, d, em), embed_video(e, d, em));
}

double tg_id(const FrameSequence& o, const FrameSequence& e, const LandmarkDetector& d, const IdentityEmbedder& em) {
  return tg_id(embed_video(o, d, em), embed_video(e, d, em));
}

// --- frechet -------------------------------------------------------------------------

namespace {

void check_covariance(const Eigen::MatrixXd& s, Eigen::Index dim, const char* name) {
  if (s.rows() != dim || s.cols() != dim) throw Error(ErrorKind::Shape, std::string(name) + " has the wrong size");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw Error(ErrorKind::Shape, std::string(name) + " is not symmetric");
}

// Symmetric PSD square root with the negative-eigenvalue tolerance.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw Error(ErrorKind::Numerical, std::string("eigendecomposition failed: ") + what);
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = -1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < tol)
      throw Error(ErrorKind::Numerical, std::string(what) + " has eigenvalue " + std::to_string(ev(i)) + " below tolerance");
    ev(i) = std::sqrt(std::max(0.0, ev(i)));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2) {
  const Eigen::Index d = mu1.size();
  if (mu2.size() != d) throw Error(ErrorKind::Shape, "frechet_distance: mean dimensions differ");
  check_covariance(s1, d, "sigma1");
  check_covariance(s2, d, "sigma2");
  const Eigen::MatrixXd r1 = psd_sqrt(s1, "sigma1");
  const Eigen::MatrixXd cross = psd_sqrt(r1 * s2 * r1, "sigma1^1/2 sigma2 sigma1^1/2");
  const double value = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross.trace();
  if (!std::isfinite(value)) throw Error(ErrorKind::Numerical, "frechet_distance is not finite");
  return std::max(0.0, value);
}

Gaussian fit_gaussian(const std::vector<Eigen::VectorXd>& samples) {
  if (samples.size() < 2) throw Error(ErrorKind::SampleCount, "need at least 2 samples to fit a covariance");
  const Eigen::Index d = samples.front().size();
  Gaussian g{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  for (const auto& s : samples) g.mean += s;
  g.mean /= static_cast<double>(samples.size());
  for (const auto& s : samples) g.covariance += (s - g.mean) * (s - g.mean).transpose();
  g.covariance /= static_cast<double>(samples.size() - 1);
  return g;
}

double fvd(const std::vector<FrameSequence>& real, const std::vector<FrameSequence>& generated,
           const VideoFeatureExtractor& backend) {
  if (real.size() < 2 || generated.size() < 2)
    throw Error(ErrorKind::SampleCount, "fvd needs at least 2 videos per set (got " + std::to_string(real.size()) +
                                            " and " + std::to_string(generated.size()) + ")");
  std::vector<Eigen::VectorXd> fr, fg;
  for (const auto& v : real) fr.push_back(backend.features(v));
  for (const auto& v : generated) fg.push_back(backend.features(v));
  const Gaussian a = fit_gaussian(fr), b = fit_gaussian(fg);
  return frechet_distance(a.mean, a.covariance, b.mean, b.covariance);
}

std::vector<FrameSequence> sliding_windows(const FrameSequence& video, std::size_t length, std::size_t stride) {
  if (length == 0 || stride == 0) throw Error(ErrorKind::Config, "window length and stride must be positive");
  std::vector<FrameSequence> out;
  if (video.size() <= length) return {video};
  for (std::size_t s = 0; s + length <= video.size(); s += stride) out.push_back(video.slice(s, length));
  return out;
}

double mean_frame_displacement(const LandmarkTrack& track) {
  if (track.size() < 2) throw Error(ErrorKind::Length, "displacement needs at least 2 frames");
  double total = 0;
  for (std::size_t i = 1; i < track.size(); ++i)
    total += mean_landmark_distance(track.points[i], track.points[i - 1]);
  return total / static_cast<double>(track.size() - 1);
}

double wobble_statistic(const LandmarkTrack& output, const LandmarkTrack& target) {
  if (output.size() != target.size()) throw Error(ErrorKind::Length, "wobble: track lengths differ");
  return mean_frame_displacement(output) - mean_frame_displacement(target);
}

// --- report ------------------------------------------------------------------------

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json mf = nlohmann::json::array();
  for (const auto& p : mean_face) mf.push_back({p.x, p.y});
  return {{"spidis", spidis},
          {"lmd", lmd},
          {"tl_id", tl_id},
          {"tg_id", tg_id},
          {"fvd", fvd},
          {"trace", {{"spidis", spidis_trace}, {"lmd", lmd_trace}}},
          {"backends", {{"identity", embedder}, {"video_features", video_features}, {"landmarks", landmark_detector}}},
          {"input_hashes", input_hashes},
          {"mean_face", mf},
          {"output_landmark_fallback", output_landmark_fallback},
          {"config", config}};
}

MetricsReport evaluate(const FrameSequence& source, const FrameSequence& target, const FrameSequence& output,
                       const LandmarkDetector& detector, const IdentityEmbedder& embedder,
                       const VideoFeatureExtractor& features, const EvaluateOptions& options) {
  if (source.size() != output.size() || target.size() != output.size())
    throw Error(ErrorKind::Length, "evaluate: source, target and output must have equal frame counts");
  if (options.output_landmarks != "detect" && options.output_landmarks != "detect_or_target")
    throw Error(ErrorKind::Config, "metrics.output_landmarks must be detect or detect_or_target");
  MetricsReport r;
  r.embedder = embedder.name();
  r.video_features = features.name();
  r.landmark_detector = detector.name();

  const LandmarkTrack lm_source = detect_all_frames(source, detector);
  const LandmarkTrack lm_target = detect_all_frames(target, detector);
  LandmarkTrack lm_output;
  std::vector<std::size_t> missing;
  for (std::size_t i = 0; i < output.size(); ++i) {
    auto s = detector.detect(output[i]);
    if (!s) {
      missing.push_back(i);
      s = lm_target.points[i];
    }
    lm_output.points.push_back(*s);
    lm_output.confidence.push_back(1.0f);
  }
  if (!missing.empty() && options.output_landmarks == "detect")
    throw Error(ErrorKind::Metric, "no face detected in output frames " + frame_list(missing));
  r.output_landmark_fallback = missing;

  const auto e_source = embed_video(source, lm_source, embedder);
  const auto e_target = embed_video(target, lm_target, embedder);
  const auto e_output = embed_video(output, lm_output, embedder);
  r.spidis = spidis(e_source, e_output, &r.spidis_trace);
  r.mean_face = mean_face({&lm_source, &lm_output});
  r.lmd = lmd(lm_source, lm_output, r.mean_face, &r.lmd_trace);
  r.tl_id = tl_id(e_target, e_output);
  r.tg_id = tg_id(e_target, e_output);
  const auto real = sliding_windows(target, options.fvd_window, options.fvd_stride);
  const auto gen = sliding_windows(output, options.fvd_window, options.fvd_stride);
  r.fvd = fvd(real, gen, features);
  for (double v : {r.spidis, r.lmd, r.tl_id, r.tg_id, r.fvd})
    if (!std::isfinite(v)) throw Error(ErrorKind::Numerical, "evaluate produced a non-finite metric");
  return r;
}

}  // namespace v2v
