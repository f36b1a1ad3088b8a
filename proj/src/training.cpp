#include "v2v/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include <torch/script.h>

#include "v2v/error.hpp"
#include "v2v/tensor_image.hpp"

namespace v2v {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

// --- pairs -------------------------------------------------------------------

TrainingPair make_training_pair(const FgBgPair& pair, const CorruptionSpec& spec, std::uint64_t seed) {
  TrainingPair out;
  out.sample = sample_corruption(spec, static_cast<int>(pair.size()), seed);
  const CorruptedForeground corrupted = apply_corruption(pair.foreground, pair.mask, out.sample);
  out.input = torch::cat({frames_to_tensor(corrupted.frames), frames_to_tensor(pair.background)}, 1);
  out.target = frames_to_tensor(pair.crop);
  std::vector<torch::Tensor> masks;
  for (const auto& m : pair.mask) {
    cv::Mat h;
    hard_mask(m).convertTo(h, CV_32F);
    masks.push_back(torch::from_blob(h.data, {1, h.rows, h.cols}, torch::kFloat32).clone());
  }
  out.hard_mask = torch::stack(masks);
  return out;
}

TrainingPair make_training_pair(const FrameSequence& clip, const LandmarkTrack& landmarks, const CorruptionSpec& spec,
                                std::uint64_t seed, int resolution) {
  return make_training_pair(extract_fg_bg(clip, landmarks, resolution), spec, seed);
}

TrainingPair make_training_pair(const FrameSequence& clip, const LandmarkDetector& detector,
                                const CorruptionSpec& spec, std::uint64_t seed, int resolution) {
  return make_training_pair(clip, detect_landmarks(clip, detector), spec, seed, resolution);
}

// --- perceptual ----------------------------------------------------------------

torch::Tensor GradientPerceptual::distance(const torch::Tensor& pred, const torch::Tensor& target) const {
  auto p = pred, t = target;
  torch::Tensor total = torch::zeros({}, pred.options());
  int scales = 0;
  for (int s = 0; s < 3; ++s) {
    if (p.size(-1) < 2 || p.size(-2) < 2) break;
    const auto dx = [](const torch::Tensor& x) { return x.narrow(-1, 1, x.size(-1) - 1) - x.narrow(-1, 0, x.size(-1) - 1); };
    const auto dy = [](const torch::Tensor& x) { return x.narrow(-2, 1, x.size(-2) - 1) - x.narrow(-2, 0, x.size(-2) - 1); };
    total = total + (dx(p) - dx(t)).abs().mean() + (dy(p) - dy(t)).abs().mean();
    ++scales;
    if (p.size(-1) < 4 || p.size(-2) < 4) break;
    p = F::avg_pool2d(p, F::AvgPool2dFuncOptions(2));
    t = F::avg_pool2d(t, F::AvgPool2dFuncOptions(2));
  }
  return total / std::max(1, scales);
}

struct TorchScriptPerceptual::Impl {
  mutable torch::jit::Module module;
};

TorchScriptPerceptual::TorchScriptPerceptual(const fs::path& path) : impl_(std::make_unique<Impl>()), path_(path) {
  try {
    impl_->module = torch::jit::load(path.string());
  } catch (const c10::Error& e) {
    throw Error(ErrorKind::Config, "cannot load perceptual weights " + path.string() + ": " + e.what_without_backtrace());
  }
  impl_->module.eval();
  for (auto p : impl_->module.parameters()) p.requires_grad_(false);
}

TorchScriptPerceptual::~TorchScriptPerceptual() = default;

torch::Tensor TorchScriptPerceptual::distance(const torch::Tensor& pred, const torch::Tensor& target) const {
  auto out = impl_->module.forward({pred, target}).toTensor();
  return out.reshape({});
}

std::unique_ptr<PerceptualMetric> make_perceptual(const std::string& backend, const fs::path& weights) {
  if (backend == "gradient") return std::make_unique<GradientPerceptual>();
  if (backend == "torchscript") {
    if (weights.empty()) throw Error(ErrorKind::Config, "perceptual backend torchscript needs training.perceptual_weights");
    return std::make_unique<TorchScriptPerceptual>(weights);
  }
  if (backend == "auto") {
    std::error_code ec;
    if (!weights.empty() && fs::exists(weights, ec)) return std::make_unique<TorchScriptPerceptual>(weights);
    return std::make_unique<GradientPerceptual>();
  }
  throw Error(ErrorKind::Config, "unknown perceptual backend '" + backend + "'");
}

// --- config ----------------------------------------------------------------------

void TrainingConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, "training." + m); };
  if (reconstruction != "l1" && reconstruction != "l2") fail("reconstruction must be l1 or l2");
  if (!(perceptual_weight >= 0)) fail("perceptual_weight must be >= 0");
  if (perceptual != "auto" && perceptual != "gradient" && perceptual != "torchscript")
    fail("perceptual must be auto, gradient or torchscript");
  if (!(learning_rate > 0)) fail("learning_rate must be > 0");
  if (steps < 0) fail("steps must be >= 0");
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
  if (min_restart_interval < 1) fail("min_restart_interval must be >= 1");
  if (threads < 0) fail("threads must be >= 0");
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"reconstruction", c.reconstruction},
                     {"perceptual_weight", c.perceptual_weight},
                     {"perceptual", c.perceptual},
                     {"perceptual_weights", c.perceptual_weights},
                     {"learning_rate", c.learning_rate},
                     {"steps", c.steps},
                     {"checkpoint_every", c.checkpoint_every},
                     {"min_restart_interval", c.min_restart_interval},
                     {"seed", c.seed},
                     {"threads", c.threads}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "training must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "reconstruction") c.reconstruction = v.get<std::string>();
      else if (key == "perceptual_weight") c.perceptual_weight = v.get<double>();
      else if (key == "perceptual") c.perceptual = v.get<std::string>();
      else if (key == "perceptual_weights") c.perceptual_weights = v.get<std::string>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "steps") c.steps = v.get<std::int64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = v.get<std::int64_t>();
      else if (key == "min_restart_interval") c.min_restart_interval = v.get<std::int64_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "threads") c.threads = v.get<int>();
      else throw Error(ErrorKind::Config, "unknown key training." + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("training: ") + e.what());
  }
}

// --- loss ------------------------------------------------------------------------

nlohmann::json LossReport::to_json() const {
  return {{"reconstruction", reconstruction},
          {"perceptual", perceptual},
          {"commitment_top", commitment_top},
          {"commitment_bottom", commitment_bottom},
          {"total", total}};
}

LossTerms compute_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& commit_top,
                       const torch::Tensor& commit_bottom, const TrainingConfig& config, double beta,
                       const PerceptualMetric& perceptual) {
  if (pred.sizes() != target.sizes())
    throw Error(ErrorKind::Shape, "compute_loss: pred " + c10::str(pred.sizes()) + " vs target " + c10::str(target.sizes()));
  LossTerms t;
  const auto diff = pred - target;
  t.reconstruction = config.reconstruction == "l2" ? diff.pow(2).mean() : diff.abs().mean();
  t.perceptual = perceptual.distance(pred, target);
  t.commitment_top = commit_top;
  t.commitment_bottom = commit_bottom;
  t.total = t.reconstruction + config.perceptual_weight * t.perceptual + beta * (commit_top + commit_bottom);
  const std::pair<const char*, const torch::Tensor*> terms[] = {{"reconstruction", &t.reconstruction},
                                                                {"perceptual", &t.perceptual},
                                                                {"commitment_top", &t.commitment_top},
                                                                {"commitment_bottom", &t.commitment_bottom},
                                                                {"total", &t.total}};
  for (const auto& [name, value] : terms)
    if (!std::isfinite(value->item<double>())) throw Error(ErrorKind::Numerical, std::string("non-finite loss term: ") + name);
  return t;
}

LossReport report(const LossTerms& t) {
  return {t.reconstruction.item<double>(), t.perceptual.item<double>(), t.commitment_top.item<double>(),
          t.commitment_bottom.item<double>(), t.total.item<double>()};
}

std::uint64_t pair_seed(std::uint64_t global_seed, std::int64_t epoch, std::int64_t clip) {
  // splitmix64 over the packed triple
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(global_seed) ^ static_cast<std::uint64_t>(epoch)) ^ static_cast<std::uint64_t>(clip));
}

// --- trainer -----------------------------------------------------------------------

Trainer::Trainer(const ModelConfig& model, const TrainingConfig& config, nlohmann::json tool_config)
    : Trainer(
          [&] {
            config.validate();
            torch::manual_seed(config.seed);
            return BlendNet(model);
          }(),
          config, std::move(tool_config), 0) {}

Trainer::Trainer(BlendNet model, const TrainingConfig& config, nlohmann::json tool_config, std::int64_t step)
    : model_(std::move(model)), config_(config), tool_config_(std::move(tool_config)), step_(step) {
  config_.validate();
  if (config_.threads > 0) torch::set_num_threads(config_.threads);
  optimizer_ = std::make_unique<torch::optim::Adam>(model_->parameters(),
                                                    torch::optim::AdamOptions(config_.learning_rate));
  perceptual_ = make_perceptual(config_.perceptual, config_.perceptual_weights);
  model_->train();
}

Trainer Trainer::resume(const fs::path& checkpoint, const TrainingConfig& config, nlohmann::json tool_config) {
  CheckpointMeta meta;
  BlendNet model = load_checkpoint(checkpoint, &meta);
  Trainer t(std::move(model), config, std::move(tool_config), meta.step);
  load_optimizer_state(checkpoint, *t.optimizer_);
  return t;
}

LossReport Trainer::train_step(const TrainingPair& pair) {
  model_->train();
  optimizer_->zero_grad();
  const BlendOutput out = model_->forward(pair.input);
  LossTerms terms;
  try {
    terms = compute_loss(out.output, pair.target, out.latents.commit_top, out.latents.commit_bottom, config_,
                         model_->config().commitment_weight, *perceptual_);
  } catch (const Error& e) {
    throw Error(e.kind(), "step " + std::to_string(step_) + ": " + e.what());
  }
  terms.total.backward();
  for (const auto& p : model_->parameters())
    if (p.grad().defined() && !torch::isfinite(p.grad()).all().item<bool>())
      throw Error(ErrorKind::Numerical, "step " + std::to_string(step_) + ": non-finite gradient");
  optimizer_->step();
  ++step_;
  return report(terms);
}

void Trainer::save(const fs::path& path, const nlohmann::json& extra) {
  CheckpointMeta meta;
  meta.model = model_->config();
  meta.tool_config = tool_config_;
  meta.step = step_;
  meta.extra = extra;
  save_checkpoint(path, model_, meta, optimizer_.get());
}

// --- loop ----------------------------------------------------------------------------

namespace {

FgBgPair window(const FgBgPair& p, std::size_t first, std::size_t count) {
  FgBgPair w;
  w.foreground = p.foreground.slice(first, count);
  w.background = p.background.slice(first, count);
  w.crop = p.crop.slice(first, count);
  w.mask.assign(p.mask.begin() + static_cast<std::ptrdiff_t>(first),
                p.mask.begin() + static_cast<std::ptrdiff_t>(first + count));
  w.crop_boxes.assign(p.crop_boxes.begin() + static_cast<std::ptrdiff_t>(first),
                      p.crop_boxes.begin() + static_cast<std::ptrdiff_t>(first + count));
  w.crop_landmarks = p.crop_landmarks.slice(first, count);
  return w;
}


}  // namespace

std::string checkpoint_name(std::int64_t step) {
  std::ostringstream os;
  os << "step_" << std::setw(7) << std::setfill('0') << step << ".ckpt";
  return os.str();
}

TrainLoopResult train_loop(const std::vector<TrainingClip>& corpus, const ModelConfig& model_config,
                           const TrainingConfig& config, const TrainLoopOptions& options,
                           const nlohmann::json& tool_config) {
  if (corpus.empty()) throw Error(ErrorKind::Config, "training corpus is empty");
  config.validate();
  model_config.validate();
  options.corruption.validate();
  const auto n = static_cast<std::size_t>(model_config.clip_length);
  std::vector<FgBgPair> pairs;
  for (const auto& clip : corpus) {
    if (clip.video.size() < n)
      throw Error(ErrorKind::Length, "clip " + clip.name + " has " + std::to_string(clip.video.size()) +
                                         " frames, fewer than clip_length " + std::to_string(n));
    pairs.push_back(extract_fg_bg(clip.video, clip.landmarks, model_config.resolution));
  }

  Trainer trainer = options.resume_from ? Trainer::resume(*options.resume_from, config, tool_config)
                                        : Trainer(model_config, config, tool_config);
  if (trainer.model()->config() != model_config)
    throw Error(ErrorKind::Version, "checkpoint model config differs from the requested one");

  TrainLoopResult result;
  result.first_step = trainer.step();
  std::error_code ec;
  fs::create_directories(options.checkpoint_dir, ec);
  std::ofstream log;
  if (!options.log_path.empty()) {
    log.open(options.log_path, std::ios::app);
    if (!log) throw Error(ErrorKind::Io, "cannot open training log " + options.log_path.string());
    if (result.first_step > 0) log << nlohmann::json{{"event", "resume"}, {"step", result.first_step}}.dump() << "\n";
  }

  const auto corpus_size = static_cast<std::int64_t>(corpus.size());
  const std::int64_t restart_every = std::max(corpus_size, config.min_restart_interval);
  // Pair construction depends only on (seed, step), so the next pair can be
  // prepared concurrently with the current update.
  auto prepare = [&](std::int64_t step) {
    const std::int64_t epoch = step / corpus_size, c = step % corpus_size;
    const std::uint64_t seed = pair_seed(config.seed, epoch, c);
    const FgBgPair& full = pairs[static_cast<std::size_t>(c)];
    const std::size_t offset = full.size() == n ? 0 : static_cast<std::size_t>(seed % (full.size() - n + 1));
    return make_training_pair(window(full, offset, n), options.corruption, seed);
  };

  std::future<TrainingPair> next;
  if (trainer.step() < config.steps) next = std::async(std::launch::async, prepare, trainer.step());
  while (trainer.step() < config.steps) {
    const std::int64_t step = trainer.step();
    const TrainingPair pair = next.get();
    if (step + 1 < config.steps) next = std::async(std::launch::async, prepare, step + 1);
    const auto t0 = std::chrono::steady_clock::now();
    const LossReport r = trainer.train_step(pair);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const auto clip = static_cast<std::size_t>(step % corpus_size);
    if (log) {
      nlohmann::json rec = r.to_json();
      rec["step"] = trainer.step();
      rec["epoch"] = step / corpus_size;
      rec["clip"] = corpus[clip].name;
      rec["seconds"] = secs;
      log << rec.dump() << "\n";
      log.flush();
    }
    if (options.on_step) options.on_step(trainer.step(), clip, r);
    if (trainer.step() % restart_every == 0) trainer.model()->restart_dead_codes(pair_seed(config.seed, trainer.step(), -1));
    if (trainer.step() % config.checkpoint_every == 0 || trainer.step() == config.steps) {
      const fs::path path = options.checkpoint_dir / checkpoint_name(trainer.step());
      trainer.save(path, {{"epoch", trainer.step() / corpus_size}, {"corpus_size", corpus_size}});
      result.checkpoints.push_back(path);
    }
  }
  result.last_step = trainer.step();
  return result;
}

}  // namespace v2v
