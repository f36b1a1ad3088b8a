#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "v2v/blendnet.hpp"
#include "v2v/corruption.hpp"
#include "v2v/metrics.hpp"
#include "v2v/training.hpp"

namespace v2v {

struct MetricsConfig {
  std::string identity = "aligned-projection-v1";
  std::string video_features = "clip-stats-projection-v1";
  // Also the detector used by preprocess, swap and corrupt-preview.
  std::string landmarks = "chroma-blob-v1";
  std::string output_landmarks = "detect_or_target";
  int fvd_window = 8, fvd_stride = 4;

  void validate() const;
};

struct PathsConfig {
  std::string corpus;                   // directory of training videos
  std::string cache = "cache";          // landmark caches + crop manifests
  std::string checkpoints = "checkpoints";
  std::string log;                      // empty: <checkpoints>/train.jsonl
};

// Whole-tool configuration. The global seed is the only seed: the training
// and corruption sections take theirs from it and may not set one.
struct ToolConfig {
  ModelConfig model;
  TrainingConfig training;
  CorruptionSpec corruption;
  MetricsConfig metrics;
  PathsConfig paths;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const ToolConfig& c);
ToolConfig tool_config_from_json(const nlohmann::json& j);

// "a.b.c=value": value parsed as JSON when it parses, else taken as a string.
void apply_override(nlohmann::json& tree, const std::string& assignment);

// defaults <- file <- overrides (in order), then validated.
ToolConfig load_tool_config(const std::optional<std::filesystem::path>& file,
                            const std::vector<std::string>& overrides);

// Manifest written by preprocess next to each landmark cache.
struct VideoManifest {
  std::string name;
  std::filesystem::path video, landmarks;
  std::string hash, detector;
  std::size_t frames = 0;
  int resolution = 0;
  std::vector<cv::Rect> crop_boxes;
};
nlohmann::json to_json(const VideoManifest& m);
VideoManifest manifest_from_json(const nlohmann::json& j);

// Videos (container files and image-sequence directories) directly under dir,
// sorted by name; `exclude` is skipped.
std::vector<std::filesystem::path> list_videos(const std::filesystem::path& dir,
                                               const std::filesystem::path& exclude = {});

// Corpus from paths.corpus with caches from paths.cache; Config error when a
// video has no up-to-date cache.
std::vector<TrainingClip> load_corpus(const ToolConfig& config);

// Desk-scale comparison used by `ablate`: every corpus clip is the target of
// a swap whose source is the next clip; wobble averages over targets, FVD
// compares windows of all targets with windows of all outputs.
struct VariantScore {
  double wobble = 0, fvd = 0;
  std::vector<double> per_clip_wobble;
  std::size_t fallback_frames = 0;  // output frames scored with target landmarks
  nlohmann::json to_json() const;
};
VariantScore score_variant(BlendNet& model, const std::vector<TrainingClip>& corpus, const ToolConfig& config);

// Entry point of the v2vswap binary. Exit codes: 0 ok, 1 config/usage,
// 2 data, 3 numerical. Errors are JSON records on `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace v2v
