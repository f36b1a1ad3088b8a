#include "v2v/inference.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <thread>

#include <opencv2/imgproc.hpp>

#include "v2v/error.hpp"
#include "v2v/geometry.hpp"
#include "v2v/tensor_image.hpp"

namespace v2v {

namespace {

std::vector<std::size_t> resample_indices(std::size_t from, std::size_t to) {
  std::vector<std::size_t> idx(to);
  for (std::size_t i = 0; i < to; ++i)
    idx[i] = to == 1 ? 0 : static_cast<std::size_t>(std::llround(static_cast<double>(i) * (from - 1) / (to - 1)));
  return idx;
}

}  // namespace

FrameSequence resample_frames(const FrameSequence& video, std::size_t frames) {
  if (frames == 0) throw Error(ErrorKind::Length, "cannot resample to zero frames");
  std::vector<cv::Mat> out;
  for (std::size_t i : resample_indices(video.size(), frames)) out.push_back(video[i]);
  return FrameSequence(std::move(out), video.fps());
}

LandmarkTrack resample_track(const LandmarkTrack& track, std::size_t frames) {
  LandmarkTrack out;
  for (std::size_t i : resample_indices(track.size(), frames)) {
    out.points.push_back(track.points[i]);
    out.confidence.push_back(track.confidence[i]);
  }
  return out;
}

SwapInputs prepare_swap_inputs(const FrameSequence& source, const LandmarkTrack& lm_source,
                               const FrameSequence& target, const LandmarkTrack& lm_target, int resolution) {
  if (source.size() != target.size() || lm_source.size() != source.size() || lm_target.size() != target.size())
    throw Error(ErrorKind::Length, "swap: source and target windows differ in length");
  SwapInputs in;
  in.target = extract_fg_bg(target, lm_target, resolution);
  std::vector<cv::Mat> fg;
  for (std::size_t i = 0; i < source.size(); ++i) {
    // align the full source frame onto the target pose, then cut the target's box
    const AffineParams t = fit_similarity(lm_source.points[i], lm_target.points[i]);
    const cv::Mat aligned = warp_similarity(source[i], t);
    const cv::Rect box = in.target.crop_boxes[i];
    const cv::Mat crop = resample_crop(aligned, box, resolution);
    const Shape68 local = to_crop_coords(transform(lm_source.points[i], t), box, resolution);
    fg.push_back(apply_mask(crop, face_mask(local, resolution)));
  }
  in.input = torch::cat({frames_to_tensor(fg), frames_to_tensor(in.target.background)}, 1);
  return in;
}

SwapResult swap_videos(BlendNet& model, const FrameSequence& source_in, const LandmarkTrack& lm_source_in,
                       const FrameSequence& target, const LandmarkTrack& lm_target, const SwapOptions& options) {
  const ModelConfig& mc = model->config();
  const int n = options.clip_length > 0 ? options.clip_length : mc.clip_length;
  if (n < 2) throw Error(ErrorKind::Config, "clip length must be >= 2");
  FrameSequence source = source_in;
  LandmarkTrack lm_source = lm_source_in;
  if (source.size() != target.size()) {
    if (!options.resample)
      throw Error(ErrorKind::Length, "source has " + std::to_string(source.size()) + " frames, target has " +
                                         std::to_string(target.size()) + " (pass --resample to stretch the source)");
    source = resample_frames(source, target.size());
    lm_source = resample_track(lm_source, target.size());
  }
  if (lm_target.size() != target.size()) throw Error(ErrorKind::Length, "target landmark track length differs");

  model->eval();
  torch::NoGradGuard no_grad;
  const std::size_t total = target.size();
  std::vector<cv::Mat> generated(total);
  SwapResult result;
  FgBgPair full_pair;  // boxes and masks of every target frame, for compositing
  for (std::size_t start = 0; start < total; start += static_cast<std::size_t>(n)) {
    const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(n), total - start);
    const std::size_t pad = static_cast<std::size_t>(n) - len;
    // short final window: left-pad by repeating its first frame
    std::vector<std::size_t> idx(pad, start);
    for (std::size_t i = 0; i < len; ++i) idx.push_back(start + i);
    std::vector<cv::Mat> s, t;
    LandmarkTrack ls, lt;
    for (std::size_t i : idx) {
      s.push_back(source[i]);
      t.push_back(target[i]);
      ls.points.push_back(lm_source.points[i]);
      ls.confidence.push_back(lm_source.confidence[i]);
      lt.points.push_back(lm_target.points[i]);
      lt.confidence.push_back(lm_target.confidence[i]);
    }
    const SwapInputs in = prepare_swap_inputs(FrameSequence(s, source.fps()), ls, FrameSequence(t, target.fps()), lt,
                                              mc.resolution);
    const auto frames = tensor_to_frames(model->forward(in.input).output);
    for (std::size_t i = pad; i < idx.size(); ++i) {
      generated[idx[i]] = frames[i];
      full_pair.mask.push_back(in.target.mask[i]);
      full_pair.crop_boxes.push_back(in.target.crop_boxes[i]);
    }
    ++result.windows;
  }
  full_pair.crop = FrameSequence(generated, target.fps());
  result.output = composite(full_pair.crop, target, full_pair);
  result.crop_boxes = full_pair.crop_boxes;
  result.source_landmarks = lm_source;
  result.target_landmarks = lm_target;
  return result;
}

SwapResult swap_videos(BlendNet& model, const FrameSequence& source, const FrameSequence& target,
                       const LandmarkDetector& detector, const SwapOptions& options) {
  const LandmarkTrack ls = detect_landmarks(source, detector);
  const LandmarkTrack lt = detect_landmarks(target, detector);
  return swap_videos(model, source, ls, target, lt, options);
}

SwapResult swap(const SwapJob& job) {
  CheckpointMeta meta;
  BlendNet model = load_checkpoint(job.checkpoint_path, &meta);
  if (job.resolution > 0 && job.resolution != meta.model.resolution)
    throw Error(ErrorKind::Version, "checkpoint resolution " + std::to_string(meta.model.resolution) +
                                        " differs from requested " + std::to_string(job.resolution));
  if (job.clip_length > 0 && job.clip_length != meta.model.clip_length)
    throw Error(ErrorKind::Version, "checkpoint clip length " + std::to_string(meta.model.clip_length) +
                                        " differs from requested " + std::to_string(job.clip_length));
  const FrameSequence source = load_video(job.source_path);
  const FrameSequence target = load_video(job.target_path);
  if (source.size() != target.size() && !job.resample)
    throw Error(ErrorKind::Length, "source has " + std::to_string(source.size()) + " frames, target has " +
                                       std::to_string(target.size()) + " (pass --resample to stretch the source)");
  const auto detector = make_landmark_detector(job.landmark_backend);
  SwapResult r = swap_videos(model, source, target, *detector, {job.clip_length, job.resample, job.seed});
  if (!job.output_path.empty()) write_video(r.output, job.output_path, job.write_options);
  return r;
}

// ---------------------------------------------------------------------------

nlohmann::json LatencyReport::to_json() const {
  return {{"median_ms", median_ms}, {"runs_ms", runs_ms}, {"hardware", hardware}, {"frames", frames},
          {"resolution", resolution}};
}

std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);)
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  return "cpu: " + cpu + " (" + std::to_string(std::thread::hardware_concurrency()) + " hw threads, libtorch " +
         std::to_string(torch::get_num_threads()) + " intra-op threads)";
}

LatencyReport benchmark_latency(BlendNet& model, int frames, int runs, int warmup) {
  model->eval();
  torch::NoGradGuard no_grad;
  const int r = model->config().resolution;
  torch::manual_seed(0);
  const auto x = torch::rand({frames, 6, r, r}) * 2 - 1;
  for (int i = 0; i < warmup; ++i) model->forward(x);
  LatencyReport rep;
  rep.frames = frames;
  rep.resolution = r;
  for (int i = 0; i < std::max(1, runs); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model->forward(x);
    rep.runs_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  auto sorted = rep.runs_ms;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  rep.median_ms = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  rep.hardware = hardware_descriptor();
  return rep;
}

LatencyReport benchmark_latency(const SwapJob& job, int runs) {
  BlendNet model = load_checkpoint(job.checkpoint_path);
  return benchmark_latency(model, job.clip_length > 0 ? job.clip_length : model->config().clip_length, runs);
}

}  // namespace v2v
