#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "v2v/blendnet.hpp"
#include "v2v/corruption.hpp"
#include "v2v/face_regions.hpp"
#include "v2v/frame_sequence.hpp"
#include "v2v/landmarks.hpp"

namespace v2v {

struct TrainingPair {
  torch::Tensor input;   // N x 6 x H x W: corrupted foreground ++ background
  torch::Tensor target;  // N x 3 x H x W: clean crop
  torch::Tensor hard_mask;  // N x 1 x H x W, 1 on the face interior
  CorruptionSample sample;
};

// Corrupts the pair's foreground with a sample drawn from (spec, seed).
TrainingPair make_training_pair(const FgBgPair& pair, const CorruptionSpec& spec, std::uint64_t seed);
TrainingPair make_training_pair(const FrameSequence& clip, const LandmarkTrack& landmarks,
                                const CorruptionSpec& spec, std::uint64_t seed, int resolution);
// Detects landmarks with the given backend first.
TrainingPair make_training_pair(const FrameSequence& clip, const LandmarkDetector& detector,
                                const CorruptionSpec& spec, std::uint64_t seed, int resolution);

/// Differentiable image distance P(pred, target) on [-1, 1] tensors.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual torch::Tensor distance(const torch::Tensor& pred, const torch::Tensor& target) const = 0;
  virtual std::string name() const = 0;
};

// Offline surrogate: mean L1 between horizontal/vertical finite differences
// at full, 1/2 and 1/4 scale.
class GradientPerceptual final : public PerceptualMetric {
 public:
  torch::Tensor distance(const torch::Tensor& pred, const torch::Tensor& target) const override;
  std::string name() const override { return "gradient-l1-multiscale"; }
};

// TorchScript module whose forward(pred, target) returns a scalar, e.g. an
// exported deep-feature distance.
class TorchScriptPerceptual final : public PerceptualMetric {
 public:
  explicit TorchScriptPerceptual(const std::filesystem::path& path);
  ~TorchScriptPerceptual() override;
  torch::Tensor distance(const torch::Tensor& pred, const torch::Tensor& target) const override;
  std::string name() const override { return "torchscript:" + path_.filename().string(); }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::filesystem::path path_;
};

// backend: "gradient", "torchscript" (weights required) or "auto" (weights
// when the file exists, otherwise the gradient surrogate).
std::unique_ptr<PerceptualMetric> make_perceptual(const std::string& backend,
                                                  const std::filesystem::path& weights);

struct TrainingConfig {
  std::string reconstruction = "l1";  // l1 | l2
  double perceptual_weight = 0.3;     // lambda_p
  std::string perceptual = "auto";
  std::string perceptual_weights;
  double learning_rate = 2e-4;
  std::int64_t steps = 20000;
  std::int64_t checkpoint_every = 1000;
  // Dead codes are re-seeded once per epoch, but never more often than this.
  std::int64_t min_restart_interval = 100;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: leave libtorch's default

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

struct LossTerms {
  torch::Tensor reconstruction, perceptual, commitment_top, commitment_bottom, total;
};

struct LossReport {
  double reconstruction = 0, perceptual = 0, commitment_top = 0, commitment_bottom = 0, total = 0;
  nlohmann::json to_json() const;
};

// total = reconstruction + lambda_p * perceptual + beta * (top + bottom).
// Throws Numerical naming the first non-finite term.
LossTerms compute_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& commit_top,
                       const torch::Tensor& commit_bottom, const TrainingConfig& config, double beta,
                       const PerceptualMetric& perceptual);
LossReport report(const LossTerms& terms);

// Seed of the corruption drawn for clip `clip` in epoch `epoch`.
std::uint64_t pair_seed(std::uint64_t global_seed, std::int64_t epoch, std::int64_t clip);

/// Owns the model, optimizer and step counter for one training run.
class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainingConfig& config, nlohmann::json tool_config = nlohmann::json::object());
  // Restores model, optimizer and step from a checkpoint.
  static Trainer resume(const std::filesystem::path& checkpoint, const TrainingConfig& config,
                        nlohmann::json tool_config = nlohmann::json::object());

  // One Adam step on J (codebooks update by EMA inside the forward pass).
  // Throws Numerical with the step index before touching the weights.
  LossReport train_step(const TrainingPair& pair);

  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object());

  BlendNet& model() { return model_; }
  std::int64_t step() const { return step_; }
  const TrainingConfig& config() const { return config_; }
  const PerceptualMetric& perceptual() const { return *perceptual_; }

 private:
  Trainer(BlendNet model, const TrainingConfig& config, nlohmann::json tool_config, std::int64_t step);

  BlendNet model_;
  TrainingConfig config_;
  nlohmann::json tool_config_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::unique_ptr<PerceptualMetric> perceptual_;
  std::int64_t step_ = 0;
};

struct TrainingClip {
  std::string name;
  FrameSequence video;
  LandmarkTrack landmarks;
};

struct TrainLoopOptions {
  std::filesystem::path checkpoint_dir;
  std::filesystem::path log_path;  // JSON lines; empty: no log
  std::optional<std::filesystem::path> resume_from;
  CorruptionSpec corruption;
  // Called after every step with (step, clip index, report).
  std::function<void(std::int64_t, std::size_t, const LossReport&)> on_step;
};

struct TrainLoopResult {
  std::vector<std::filesystem::path> checkpoints;
  std::int64_t first_step = 0;  // > 0 when resumed
  std::int64_t last_step = 0;
};

// Cycles through the corpus one clip per step (a random N-frame window of
// clips longer than N), drawing a fresh corruption per (epoch, clip).
// Checkpoints every config.checkpoint_every steps and at the end.
// "step_0000042.ckpt"
std::string checkpoint_name(std::int64_t step);

TrainLoopResult train_loop(const std::vector<TrainingClip>& corpus, const ModelConfig& model,
                           const TrainingConfig& config, const TrainLoopOptions& options,
                           const nlohmann::json& tool_config = nlohmann::json::object());

}  // namespace v2v
