#include <cmath>
#include <map>
#include <random>

#include <gtest/gtest.h>

#include "v2v/error.hpp"
#include "v2v/metrics.hpp"
#include "v2v/synthetic_face.hpp"

using namespace v2v;

namespace {

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no v2v::Error thrown";
  return ErrorKind::Config;
}

const TalkingHead& head(std::uint64_t seed) {
  static std::map<std::uint64_t, TalkingHead> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) it = cache.emplace(seed, render_talking_head(random_identity(seed), {.frames = 8, .seed = seed})).first;
  return it->second;
}

FrameSequence add_noise(const FrameSequence& v, double sigma, unsigned seed) {
  std::vector<cv::Mat> out;
  cv::RNG rng(seed);
  for (const auto& f : v) {
    cv::Mat n(f.size(), CV_32FC3), g;
    rng.fill(n, cv::RNG::NORMAL, 0, sigma);
    f.convertTo(g, CV_32FC3);
    g += n;
    g.convertTo(g, CV_8UC3);
    out.push_back(g);
  }
  return FrameSequence(out, v.fps());
}

LandmarkTrack track_of(std::vector<Shape68> shapes) {
  LandmarkTrack t;
  t.points = std::move(shapes);
  t.confidence.assign(t.points.size(), 1.0f);
  return t;
}

Shape68 similarity(const Shape68& s, double angle, double scale, cv::Point2d shift) {
  Shape68 o;
  for (int k = 0; k < kLandmarkCount; ++k)
    o[k] = {scale * (std::cos(angle) * s[k].x - std::sin(angle) * s[k].y) + shift.x,
            scale * (std::sin(angle) * s[k].x + std::cos(angle) * s[k].y) + shift.y};
  return o;
}

Embedding unit(int dim, int axis) {
  Embedding e(dim, 0.0f);
  e[axis] = 1.0f;
  return e;
}

}  // namespace

// --- Frechet ---------------------------------------------------------------------

TEST(Frechet, IdenticalIsZero) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Random(5, 5);
  const Eigen::MatrixXd s = a * a.transpose() + Eigen::MatrixXd::Identity(5, 5);
  const Eigen::VectorXd mu = Eigen::VectorXd::Random(5);
  EXPECT_NEAR(frechet_distance(mu, s, mu, s), 0.0, 1e-9);
}

TEST(Frechet, OneDimensional) {
  Eigen::VectorXd m0(1), m1(1);
  m0 << 0;
  m1 << 1;
  Eigen::MatrixXd one(1, 1), four(1, 1);
  one << 1;
  four << 4;
  EXPECT_NEAR(frechet_distance(m0, one, m1, one), 1.0, 1e-12);
  // (mu diff)^2 + (sigma1 - sigma2)^2 = 1 + 1
  EXPECT_NEAR(frechet_distance(m0, one, m1, four), 2.0, 1e-12);
}

TEST(Frechet, DiagonalClosedForm) {
  Eigen::VectorXd m0(2), m1(2);
  m0 << 1, -2;
  m1 << 0, 3;
  const Eigen::MatrixXd s1 = Eigen::Vector2d(2.0, 0.5).asDiagonal(), s2 = Eigen::Vector2d(3.0, 9.0).asDiagonal();
  const double expected = 1 + 25 + std::pow(std::sqrt(2.0) - std::sqrt(3.0), 2) + std::pow(std::sqrt(0.5) - 3.0, 2);
  EXPECT_NEAR(frechet_distance(m0, s1, m1, s2), expected, 1e-10);
}

TEST(Frechet, GeneralMatchesEigenvaluesOfProduct) {
  // Tr((S1^1/2 S2 S1^1/2)^1/2) = sum sqrt(eig(S1 S2)), computed independently
  std::mt19937 rng(4);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd a(4, 4), b(4, 4);
    for (int i = 0; i < 16; ++i) {
      a.data()[i] = n(rng);
      b.data()[i] = n(rng);
    }
    const Eigen::MatrixXd s1 = a * a.transpose() + 0.1 * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::MatrixXd s2 = b * b.transpose() + 0.1 * Eigen::MatrixXd::Identity(4, 4);
    const Eigen::VectorXd mu1 = Eigen::VectorXd::Random(4), mu2 = Eigen::VectorXd::Random(4);
    Eigen::EigenSolver<Eigen::MatrixXd> es(s1 * s2);
    double tr = 0;
    for (int i = 0; i < 4; ++i) tr += std::sqrt(es.eigenvalues()(i).real());
    const double expected = (mu1 - mu2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr;
    EXPECT_NEAR(frechet_distance(mu1, s1, mu2, s2), expected, 1e-8 * std::max(1.0, expected));
  }
}

TEST(Frechet, IndefiniteCovarianceIsNumericalError) {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(2);
  const Eigen::MatrixXd bad = Eigen::Vector2d(1.0, -0.5).asDiagonal();
  EXPECT_EQ(kind_of([&] { frechet_distance(m, bad, m, Eigen::MatrixXd::Identity(2, 2)); }), ErrorKind::Numerical);
  // tiny negative round-off is clamped
  const Eigen::MatrixXd nearly = Eigen::Vector2d(1.0, -1e-12).asDiagonal();
  EXPECT_NO_THROW(frechet_distance(m, nearly, m, nearly));
}

TEST(Frechet, UnbiasedGaussianFit) {
  const Gaussian g = fit_gaussian({Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, 2.0)});
  EXPECT_DOUBLE_EQ(g.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(g.covariance(0, 0), 2.0);
  EXPECT_EQ(kind_of([] { fit_gaussian({Eigen::VectorXd::Zero(3)}); }), ErrorKind::SampleCount);
}

// --- FVD ---------------------------------------------------------------------------

TEST(Fvd, IdenticalSetsScoreZero) {
  const ProjectionVideoFeatures f;
  const auto w = sliding_windows(head(1).video, 4, 2);
  EXPECT_EQ(w.size(), 3u);
  EXPECT_NEAR(fvd(w, w, f), 0.0, 1e-6);
}

TEST(Fvd, NoiseIncreasesDistance) {
  const ProjectionVideoFeatures f;
  const auto real = sliding_windows(head(1).video, 4, 2);
  const auto mild = sliding_windows(add_noise(head(1).video, 4, 1), 4, 2);
  const auto heavy = sliding_windows(add_noise(head(1).video, 30, 1), 4, 2);
  const double a = fvd(real, mild, f), b = fvd(real, heavy, f);
  EXPECT_GT(a, 0.0);
  EXPECT_GT(b, a);
}

TEST(Fvd, TooFewSamples) {
  const ProjectionVideoFeatures f;
  const std::vector<FrameSequence> one{head(1).video};
  EXPECT_EQ(kind_of([&] { fvd(one, one, f); }), ErrorKind::SampleCount);
}

TEST(Fvd, SlidingWindowCounts) {
  const FrameSequence v = render_talking_head(random_identity(2), {.width = 64, .height = 64, .frames = 20}).video;
  EXPECT_EQ(sliding_windows(v, 8, 4).size(), 4u);
  EXPECT_EQ(sliding_windows(v, 30, 4).size(), 1u);
}

// --- SPIDis --------------------------------------------------------------------

TEST(Spidis, IdentityIsZeroAndSymmetric) {
  const ProjectionEmbedder e;
  const auto a = embed_video(head(1).video, head(1).truth, e);
  const auto b = embed_video(head(2).video, head(2).truth, e);
  EXPECT_DOUBLE_EQ(spidis(a, a), 0.0);
  EXPECT_DOUBLE_EQ(spidis(a, b), spidis(b, a));
  std::vector<double> trace;
  spidis(a, b, &trace);
  EXPECT_EQ(trace.size(), 8u);
}

TEST(Spidis, DistinctIdentityFartherThanNoisyCopy) {
  const ProjectionEmbedder e;
  const auto a = embed_video(head(1).video, head(1).truth, e);
  const auto noisy = embed_video(add_noise(head(1).video, 5, 3), head(1).truth, e);
  const auto other = embed_video(head(2).video, head(2).truth, e);
  EXPECT_LT(spidis(a, noisy), spidis(a, other));
}

TEST(Spidis, EmbeddingsAreUnitNorm) {
  const ProjectionEmbedder e;
  const Embedding v = e.embed(head(1).video[0], head(1).truth.points[0]);
  ASSERT_EQ(static_cast<int>(v.size()), e.dim());
  double n = 0;
  for (float x : v) n += x * x;
  EXPECT_NEAR(n, 1.0, 1e-5);
}

TEST(Spidis, UndetectedFramesAreListed) {
  std::vector<cv::Mat> frames;
  for (int i = 0; i < 4; ++i) frames.push_back(head(1).video[i].clone());
  frames[2].setTo(cv::Scalar::all(0));
  const ChromaLandmarkDetector d;
  try {
    detect_all_frames(FrameSequence(frames, {25, 1}), d);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Metric);
    EXPECT_NE(std::string(err.what()).find("frames 2"), std::string::npos) << err.what();
  }
}

TEST(Backends, UnknownNamesAreConfigErrors) {
  EXPECT_EQ(kind_of([] { make_identity_embedder("arcface"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { make_video_features("i3d"); }), ErrorKind::Config);
  EXPECT_EQ(make_identity_embedder("default")->name(), "aligned-projection-v1");
}

// --- LMD -------------------------------------------------------------------------

TEST(Lmd, IdentityIsZero) {
  const auto& t = head(1).truth;
  EXPECT_DOUBLE_EQ(lmd(t, t), 0.0);
}

TEST(Lmd, InvariantToSimilarity) {
  const auto& t = head(1).truth;
  const Shape68 mean = mean_face({&t});
  std::vector<Shape68> moved;
  for (const auto& s : t.points) moved.push_back(similarity(s, 0.3, 1.7, {25, -11}));
  const LandmarkTrack m = track_of(moved);
  EXPECT_NEAR(lmd(t, m, mean), 0.0, 1e-5);
  const auto& other = head(2).truth;
  EXPECT_NEAR(lmd(t, other, mean), lmd(m, other, mean), 1e-5);
}

TEST(Lmd, MouthOpeningMatchesHandComputation) {
  // level eyes, mean face = the shape itself, so normalization is a pure
  // centring; moving m lower-lip points by d shifts the centroid by m d / 68
  const Shape68 s = pose_landmarks(canonical_landmarks(FaceIdentity{}, FaceExpression{}), {{80, 80}, 40.0, 0.0});
  Shape68 open = s;
  const std::vector<int> lower{56, 57, 58, 65, 66, 67};
  const double d = 3.0;
  for (int k : lower) open[k].y += d;
  const double m = static_cast<double>(lower.size()), shift = m * d / 68.0;
  const double expected = (m * (d - shift) + (51.0 - m) * shift) / 51.0;
  const LandmarkTrack a = track_of({s}), b = track_of({open});
  EXPECT_NEAR(lmd(a, b, s), expected, 1e-9);
}

TEST(Lmd, LengthMismatch) {
  const auto& t = head(1).truth;
  EXPECT_EQ(kind_of([&] { lmd(t, t.slice(0, 3)); }), ErrorKind::Length);
}

// --- identity consistency ---------------------------------------------------------

TEST(IdConsistency, IdenticalVideosScoreOne) {
  const ProjectionEmbedder e;
  const auto a = embed_video(head(1).video, head(1).truth, e);
  EXPECT_DOUBLE_EQ(tl_id(a, a), 1.0);
  EXPECT_DOUBLE_EQ(tg_id(a, a), 1.0);
}

TEST(IdConsistency, SingleFrameSwapHandFormula) {
  // constant original; edited frame 3 of 8 is orthogonal
  const int n = 8;
  std::vector<Embedding> orig(n, unit(4, 0)), edited = orig;
  edited[3] = unit(4, 1);
  EXPECT_NEAR(tl_id(orig, edited), 5.0 / 7.0, 1e-12);
  EXPECT_NEAR(tg_id(orig, edited), 21.0 / 28.0, 1e-12);
  // reversal changes neither statistic
  std::vector<Embedding> ro(orig.rbegin(), orig.rend()), re(edited.rbegin(), edited.rend());
  EXPECT_DOUBLE_EQ(tl_id(ro, re), tl_id(orig, edited));
  EXPECT_DOUBLE_EQ(tg_id(ro, re), tg_id(orig, edited));
}

TEST(IdConsistency, SwappedFrameLowersVideoScores) {
  const ProjectionEmbedder e;
  const auto a = embed_video(head(1).video, head(1).truth, e);
  auto edited = a;
  edited[4] = embed_video(head(2).video, head(2).truth, e)[4];
  EXPECT_LT(tl_id(a, edited), 1.0);
  EXPECT_LT(tg_id(a, edited), 1.0);
}

TEST(IdConsistency, NeedsTwoFrames) {
  std::vector<Embedding> one{unit(4, 0)};
  EXPECT_EQ(kind_of([&] { tl_id(one, one); }), ErrorKind::Length);
}

// --- evaluate -------------------------------------------------------------------

TEST(Evaluate, SelfComparisonIsPerfect) {
  const auto& v = head(1).video;
  const ChromaLandmarkDetector d;
  const ProjectionEmbedder e;
  const ProjectionVideoFeatures f;
  const MetricsReport r = evaluate(v, v, v, d, e, f, {.fvd_window = 4, .fvd_stride = 2});
  EXPECT_DOUBLE_EQ(r.spidis, 0.0);
  EXPECT_DOUBLE_EQ(r.lmd, 0.0);
  EXPECT_DOUBLE_EQ(r.tl_id, 1.0);
  EXPECT_DOUBLE_EQ(r.tg_id, 1.0);
  EXPECT_NEAR(r.fvd, 0.0, 1e-6);
  EXPECT_TRUE(r.output_landmark_fallback.empty());
  const auto j = r.to_json();
  for (const char* key : {"spidis", "lmd", "tl_id", "tg_id", "fvd", "trace", "backends", "mean_face"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["backends"]["landmarks"], "chroma-blob-v1");
}

TEST(Evaluate, UndetectedOutputFallsBackOrFails) {
  const auto& v = head(1).video;
  std::vector<cv::Mat> frames;
  for (const auto& f : v) frames.push_back(f.clone());
  frames[5].setTo(cv::Scalar::all(0));
  const FrameSequence out(frames, v.fps());
  const ChromaLandmarkDetector d;
  const ProjectionEmbedder e;
  const ProjectionVideoFeatures f;
  const MetricsReport r = evaluate(v, v, out, d, e, f, {.fvd_window = 4, .fvd_stride = 2});
  EXPECT_EQ(r.output_landmark_fallback, std::vector<std::size_t>{5});
  EXPECT_EQ(kind_of([&] {
              evaluate(v, v, out, d, e, f, {.fvd_window = 4, .fvd_stride = 2, .output_landmarks = "detect"});
            }),
            ErrorKind::Metric);
}
