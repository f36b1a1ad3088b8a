#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "v2v/blendnet.hpp"
#include "v2v/face_regions.hpp"
#include "v2v/frame_sequence.hpp"
#include "v2v/landmarks.hpp"
#include "v2v/video_io.hpp"

namespace v2v {

struct SwapJob {
  std::filesystem::path source_path, target_path, output_path, checkpoint_path;
  int clip_length = 0;  // 0: the checkpoint's clip length
  int resolution = 0;   // 0: the checkpoint's resolution
  std::uint64_t seed = 0;
  bool resample = false;
  std::string landmark_backend = "chroma";
  VideoWriteOptions write_options;
};

struct SwapOptions {
  int clip_length = 0;
  bool resample = false;
  std::uint64_t seed = 0;
};

struct SwapResult {
  FrameSequence output;
  LandmarkTrack source_landmarks, target_landmarks;
  std::vector<cv::Rect> crop_boxes;
  std::size_t windows = 0;
};

// Nearest-frame uniform resampling to `frames` frames.
FrameSequence resample_frames(const FrameSequence& video, std::size_t frames);
LandmarkTrack resample_track(const LandmarkTrack& track, std::size_t frames);

// Blend input for one clip: source aligned onto the target landmarks and
// cropped with the target's boxes, plus the target background.
struct SwapInputs {
  torch::Tensor input;  // N x 6 x R x R
  FgBgPair target;
};
SwapInputs prepare_swap_inputs(const FrameSequence& source, const LandmarkTrack& lm_source,
                               const FrameSequence& target, const LandmarkTrack& lm_target, int resolution);

// In-memory pipeline (model in eval mode, no gradients). Throws Length when
// frame counts differ and resample is off.
SwapResult swap_videos(BlendNet& model, const FrameSequence& source, const LandmarkTrack& lm_source,
                       const FrameSequence& target, const LandmarkTrack& lm_target, const SwapOptions& options);
SwapResult swap_videos(BlendNet& model, const FrameSequence& source, const FrameSequence& target,
                       const LandmarkDetector& detector, const SwapOptions& options);

// Loads everything from disk, runs the pipeline and writes output_path.
SwapResult swap(const SwapJob& job);

struct LatencyReport {
  double median_ms = 0;
  std::vector<double> runs_ms;
  std::string hardware;
  int frames = 0, resolution = 0;
  nlohmann::json to_json() const;
};

// Wall-clock of the model forward alone on a random clip; median of `runs`
// after `warmup` untimed passes.
LatencyReport benchmark_latency(BlendNet& model, int frames, int runs = 10, int warmup = 2);
LatencyReport benchmark_latency(const SwapJob& job, int runs = 10);

std::string hardware_descriptor();

}  // namespace v2v
