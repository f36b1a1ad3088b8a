#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace v2v {

struct ModelConfig {
  int resolution = 256;
  int codebook_size = 512;  // K
  int embed_dim = 64;       // D
  int channels = 128;
  int residual_channels = 32;
  int residual_blocks = 2;
  std::array<int, 3> temporal_kernel{3, 3, 3};  // (t, h, w)
  int temporal_blocks = 2;
  bool temporal = true;  // false: temporal module is the identity
  double commitment_weight = 0.25;
  double ema_decay = 0.99;
  double ema_epsilon = 1e-5;
  int clip_length = 8;

  // Throws Config: resolution divisible by 8, odd kernels, positive sizes,
  // decay in (0, 1).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// --- vector quantization ---------------------------------------------------

// Nearest codebook row for every row of `flat` (M x D) by squared Euclidean
// distance computed from explicit differences; ties go to the lowest index.
// Works in the dtype of the inputs. Returns int64 [M].
torch::Tensor nearest_codes(const torch::Tensor& flat, const torch::Tensor& embed);

struct QuantizeResult {
  torch::Tensor quantized;    // straight-through: same shape as the features
  torch::Tensor codes;        // int64 N x h x w
  torch::Tensor commit_loss;  // mean squared distance to the detached entries
};

// Pure quantizer over N x D x h x w features (no codebook update).
QuantizeResult quantize(const torch::Tensor& features, const torch::Tensor& embed);

/// EMA codebook. Buffers: embed (K x D), cluster_size (K), embed_avg (K x D)
/// and usage (K), the assignment count since the last dead-code restart.
class CodebookImpl : public torch::nn::Module {
 public:
  CodebookImpl(int codebook_size, int embed_dim, double decay, double epsilon);

  // Quantizes; in training mode also applies the EMA update.
  QuantizeResult forward(const torch::Tensor& features);

  // Re-seeds entries unused since the last call with random encoder outputs
  // seen during training, then clears the usage counters. Returns the number
  // of restarted entries.
  int restart_dead_codes(std::uint64_t seed);

  const torch::Tensor& embed() const { return embed_; }
  const torch::Tensor& cluster_size() const { return cluster_size_; }
  const torch::Tensor& usage() const { return usage_; }
  int size() const { return codebook_size_; }
  int dim() const { return embed_dim_; }

 private:
  void ema_update(const torch::Tensor& flat, const torch::Tensor& codes);

  int codebook_size_, embed_dim_;
  double decay_, epsilon_;
  torch::Tensor embed_, cluster_size_, embed_avg_, usage_;
  torch::Tensor recent_;  // sample of recent encoder outputs (not persisted)
};
TORCH_MODULE(Codebook);

// --- network blocks ----------------------------------------------------------

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int channels, int hidden);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ResBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(int in_channels, int channels, int res_blocks, int res_channels, int stride);
  torch::Tensor forward(const torch::Tensor& x) { return body->forward(x); }

 private:
  torch::nn::Sequential body;
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(int in_channels, int out_channels, int channels, int res_blocks, int res_channels,
              int stride);
  torch::Tensor forward(const torch::Tensor& x) { return body->forward(x); }

 private:
  torch::nn::Sequential body;
};
TORCH_MODULE(Decoder);

/// Residual 3D-convolution stack over (time, height, width) with zero padding.
/// Input/output N x C x h x w; frames are the time axis.
class TemporalModuleImpl : public torch::nn::Module {
 public:
  TemporalModuleImpl(int channels, std::array<int, 3> kernel, int blocks, bool enabled);
  torch::Tensor forward(const torch::Tensor& x);
  bool enabled() const { return enabled_; }

 private:
  bool enabled_;
  torch::nn::ModuleList convs;
};
TORCH_MODULE(TemporalModule);

struct Latents {
  torch::Tensor quantized_top, quantized_bottom;
  torch::Tensor codes_top, codes_bottom;
  torch::Tensor commit_top, commit_bottom;
};

struct BlendOutput {
  torch::Tensor output;  // N x 3 x H x W in [-1, 1]
  Latents latents;
};

/// Two-level quantized temporal autoencoder over six-channel clips
/// (source foreground ++ target background, N x 6 x H x W in [-1, 1]).
class BlendNetImpl : public torch::nn::Module {
 public:
  explicit BlendNetImpl(const ModelConfig& config);

  // Framewise encoders: bottom N x C x H/4 x W/4, top N x C x H/8 x W/8.
  std::pair<torch::Tensor, torch::Tensor> encode(const torch::Tensor& input);
  torch::Tensor temporal_mix_top(const torch::Tensor& x) { return temporal_t->forward(x); }
  torch::Tensor temporal_mix_bottom(const torch::Tensor& x) { return temporal_b->forward(x); }
  Latents quantize_latents(const torch::Tensor& input);
  torch::Tensor decode(const torch::Tensor& quantized_top, const torch::Tensor& quantized_bottom);
  BlendOutput forward(const torch::Tensor& input);

  void check_input(const torch::Tensor& input) const;
  const ModelConfig& config() const { return config_; }
  // Dead-code restart on both codebooks.
  int restart_dead_codes(std::uint64_t seed);

  Encoder enc_b{nullptr}, enc_t{nullptr};
  torch::nn::Conv2d quantize_conv_t{nullptr}, quantize_conv_b{nullptr};
  TemporalModule temporal_t{nullptr}, temporal_b{nullptr};
  Codebook quantize_t{nullptr}, quantize_b{nullptr};
  Decoder dec_t{nullptr}, dec{nullptr};
  torch::nn::ConvTranspose2d upsample_t{nullptr};

 private:
  ModelConfig config_;
};
TORCH_MODULE(BlendNet);

// Pixels [0, 255] <-> [-1, 1].
torch::Tensor to_unit_range(const torch::Tensor& uint8_or_float);

// --- checkpoints -------------------------------------------------------------

struct CheckpointMeta {
  ModelConfig model;
  nlohmann::json tool_config = nlohmann::json::object();
  std::int64_t step = 0;
  nlohmann::json extra = nlohmann::json::object();  // training cursor etc.
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Single file: magic, version, JSON header (metadata + tensor index), raw
// little-endian tensor bytes, optional optimizer archive.
void save_checkpoint(const std::filesystem::path& path, BlendNet& model, const CheckpointMeta& meta,
                     torch::optim::Optimizer* optimizer = nullptr);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

// Builds a model from the embedded config and loads weights/buffers. Throws
// Version for a wrong magic/version or a config the caller did not expect.
BlendNet load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta = nullptr);

// Restores the optimizer archive into an optimizer built over the loaded
// model's parameters. Returns false when the file carries none.
bool load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer);

}  // namespace v2v
