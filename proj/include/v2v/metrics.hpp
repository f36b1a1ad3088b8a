#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>

#include "v2v/frame_sequence.hpp"
#include "v2v/landmarks.hpp"

namespace v2v {

using Embedding = std::vector<float>;

/// Per-frame identity embedding of the face described by `landmarks`.
class IdentityEmbedder {
 public:
  virtual ~IdentityEmbedder() = default;
  virtual Embedding embed(const cv::Mat& rgb, const Shape68& landmarks) const = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
};

// Default: eye-aligned 32x32 face patch, mean-centred, projected by a fixed
// Gaussian matrix to 128 dims and L2-normalized.
class ProjectionEmbedder final : public IdentityEmbedder {
 public:
  explicit ProjectionEmbedder(int dim = 128, std::uint64_t seed = 0x1d3b5);
  Embedding embed(const cv::Mat& rgb, const Shape68& landmarks) const override;
  int dim() const override { return dim_; }
  std::string name() const override { return "aligned-projection-v1"; }

 private:
  int dim_;
  Eigen::MatrixXf projection_;
};

/// Fixed-length feature vector of a whole clip, for FVD.
class VideoFeatureExtractor {
 public:
  virtual ~VideoFeatureExtractor() = default;
  virtual Eigen::VectorXd features(const FrameSequence& video) const = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
};

// Default: 16x16 frames; temporal mean, temporal std and mean absolute frame
// difference per pixel/channel, randomly projected to `dim`.
class ProjectionVideoFeatures final : public VideoFeatureExtractor {
 public:
  explicit ProjectionVideoFeatures(int dim = 64, std::uint64_t seed = 0xf7d);
  Eigen::VectorXd features(const FrameSequence& video) const override;
  int dim() const override { return dim_; }
  std::string name() const override { return "clip-stats-projection-v1"; }

 private:
  int dim_;
  Eigen::MatrixXd projection_;
};

std::unique_ptr<IdentityEmbedder> make_identity_embedder(const std::string& backend);
std::unique_ptr<VideoFeatureExtractor> make_video_features(const std::string& backend);

// Embeds every frame; frames without landmarks are a Metric error listing them.
std::vector<Embedding> embed_video(const FrameSequence& video, const LandmarkTrack& landmarks,
                                   const IdentityEmbedder& embedder);
std::vector<Embedding> embed_video(const FrameSequence& video, const LandmarkDetector& detector,
                                   const IdentityEmbedder& embedder);

// Per-frame detection without interpolation; Metric error listing failures.
LandmarkTrack detect_all_frames(const FrameSequence& video, const LandmarkDetector& detector);

double embedding_distance(const Embedding& a, const Embedding& b);
double cosine_similarity(const Embedding& a, const Embedding& b);

// Mean Euclidean distance between per-frame embeddings.
double spidis(const std::vector<Embedding>& source, const std::vector<Embedding>& output,
              std::vector<double>* per_frame = nullptr);
double spidis(const FrameSequence& source, const FrameSequence& output, const LandmarkDetector& detector,
              const IdentityEmbedder& embedder);

/// Reference configuration for LMD: average of centred, eye-levelled shapes
/// (pixel scale kept).
Shape68 mean_face(const std::vector<const LandmarkTrack*>& tracks);
double interocular_distance(const Shape68& s);

// Centre on the centroid, rotate the eye line to the mean face's, scale to the
// mean face's inter-ocular distance.
Shape68 normalize_shape(const Shape68& s, const Shape68& mean);

// Mean distance over indices 17..67 of normalized shapes, averaged over
// frames. Without a mean face, one is built from both tracks.
double lmd(const LandmarkTrack& a, const LandmarkTrack& b, const Shape68& mean,
           std::vector<double>* per_frame = nullptr);
double lmd(const LandmarkTrack& a, const LandmarkTrack& b);

// Mean adjacent-pair (tl) / all-pair (tg) cosine similarity of `edited`
// divided by the same statistic of `original`.
double tl_id(const std::vector<Embedding>& original, const std::vector<Embedding>& edited);
double tg_id(const std::vector<Embedding>& original, const std::vector<Embedding>& edited);
double tl_id(const FrameSequence& original, const FrameSequence& edited, const LandmarkDetector& detector,
             const IdentityEmbedder& embedder);
double tg_id(const FrameSequence& original, const FrameSequence& edited, const LandmarkDetector& detector,
             const IdentityEmbedder& embedder);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2). Eigenvalues below
// -1e-8 * max(1, |lambda|max) are a Numerical error; the rest clamp to 0.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& sigma1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& sigma2);

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased (n - 1)
};
Gaussian fit_gaussian(const std::vector<Eigen::VectorXd>& samples);

// SampleCount error for fewer than 2 videos per set.
double fvd(const std::vector<FrameSequence>& real, const std::vector<FrameSequence>& generated,
           const VideoFeatureExtractor& backend);

// Clips of `length` frames every `stride` frames (at least one clip).
std::vector<FrameSequence> sliding_windows(const FrameSequence& video, std::size_t length, std::size_t stride);

// Mean per-point landmark displacement between consecutive frames.
double mean_frame_displacement(const LandmarkTrack& track);
// Jitter the output adds on top of the target's own motion.
double wobble_statistic(const LandmarkTrack& output, const LandmarkTrack& target);

struct MetricsReport {
  double spidis = 0, lmd = 0, tl_id = 1, tg_id = 1, fvd = 0;
  std::vector<double> spidis_trace, lmd_trace;
  std::string embedder, video_features, landmark_detector;
  nlohmann::json input_hashes = nlohmann::json::object();
  Shape68 mean_face{};
  std::vector<std::size_t> output_landmark_fallback;  // frames scored with target landmarks
  nlohmann::json config = nlohmann::json::object();

  nlohmann::json to_json() const;
};

struct EvaluateOptions {
  std::size_t fvd_window = 8, fvd_stride = 4;
  // "detect" (fail on undetected output frames) or "detect_or_target"
  // (use the target's landmarks for those frames and record them).
  std::string output_landmarks = "detect_or_target";
};

// spidis(source, output); lmd(source, output) on expression-normalized
// landmarks; tl/tg-id(target -> output); fvd(target windows, output windows).
MetricsReport evaluate(const FrameSequence& source, const FrameSequence& target, const FrameSequence& output,
                       const LandmarkDetector& detector, const IdentityEmbedder& embedder,
                       const VideoFeatureExtractor& features, const EvaluateOptions& options = {});

}  // namespace v2v
