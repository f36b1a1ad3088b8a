#include "v2v/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <opencv2/imgproc.hpp>

#include "v2v/error.hpp"
#include "v2v/face_regions.hpp"
#include "v2v/inference.hpp"
#include "v2v/landmarks.hpp"
#include "v2v/video_io.hpp"

namespace v2v {

namespace fs = std::filesystem;
using nlohmann::json;

// --- configuration ------------------------------------------------------------

void MetricsConfig::validate() const {
  if (output_landmarks != "detect" && output_landmarks != "detect_or_target")
    throw Error(ErrorKind::Config, "metrics.output_landmarks must be detect or detect_or_target");
  if (fvd_window < 2 || fvd_stride < 1) throw Error(ErrorKind::Config, "metrics.fvd_window >= 2 and fvd_stride >= 1");
  // resolve names now so a typo fails before any work
  make_identity_embedder(identity);
  make_video_features(video_features);
  make_landmark_detector(landmarks);
}

void ToolConfig::validate() const {
  model.validate();
  training.validate();
  corruption.validate();
  metrics.validate();
}

namespace {

json metrics_json(const MetricsConfig& m) {
  return {{"identity", m.identity},
          {"video_features", m.video_features},
          {"landmarks", m.landmarks},
          {"output_landmarks", m.output_landmarks},
          {"fvd_window", m.fvd_window},
          {"fvd_stride", m.fvd_stride}};
}

MetricsConfig metrics_from(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "metrics must be an object");
  MetricsConfig m;
  for (const auto& [key, v] : j.items()) {
    if (key == "identity") m.identity = v.get<std::string>();
    else if (key == "video_features") m.video_features = v.get<std::string>();
    else if (key == "landmarks") m.landmarks = v.get<std::string>();
    else if (key == "output_landmarks") m.output_landmarks = v.get<std::string>();
    else if (key == "fvd_window") m.fvd_window = v.get<int>();
    else if (key == "fvd_stride") m.fvd_stride = v.get<int>();
    else throw Error(ErrorKind::Config, "unknown key metrics." + key);
  }
  return m;
}

json paths_json(const PathsConfig& p) {
  return {{"corpus", p.corpus}, {"cache", p.cache}, {"checkpoints", p.checkpoints}, {"log", p.log}};
}

PathsConfig paths_from(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "paths must be an object");
  PathsConfig p;
  for (const auto& [key, v] : j.items()) {
    if (key == "corpus") p.corpus = v.get<std::string>();
    else if (key == "cache") p.cache = v.get<std::string>();
    else if (key == "checkpoints") p.checkpoints = v.get<std::string>();
    else if (key == "log") p.log = v.get<std::string>();
    else throw Error(ErrorKind::Config, "unknown key paths." + key);
  }
  return p;
}

}  // namespace

json to_json(const ToolConfig& c) {
  json model = c.model, training = c.training, corruption = c.corruption;
  training.erase("seed");
  corruption.erase("seed");
  return {{"model", model},
          {"training", training},
          {"corruption", corruption},
          {"metrics", metrics_json(c.metrics)},
          {"paths", paths_json(c.paths)},
          {"seed", c.seed}};
}

ToolConfig tool_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "configuration must be an object");
  ToolConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if ((key == "training" || key == "corruption") && v.is_object() && v.contains("seed"))
        throw Error(ErrorKind::Config, key + ".seed is derived; set the top-level seed instead");
      if (key == "model") c.model = v.get<ModelConfig>();
      else if (key == "training") c.training = v.get<TrainingConfig>();
      else if (key == "corruption") c.corruption = v.get<CorruptionSpec>();
      else if (key == "metrics") c.metrics = metrics_from(v);
      else if (key == "paths") c.paths = paths_from(v);
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw Error(ErrorKind::Config, "unknown configuration section '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("configuration: ") + e.what());
  }
  c.training.seed = c.seed;
  c.corruption.seed = c.seed;
  return c;
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw Error(ErrorKind::Config, "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &tree;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error(ErrorKind::Config, "malformed override key '" + key + "'");
    if (!node->is_object()) throw Error(ErrorKind::Config, "override '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

ToolConfig load_tool_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  json tree = to_json(ToolConfig{});
  if (file) {
    std::ifstream in(*file);
    if (!in) throw Error(ErrorKind::Config, "cannot read config file " + file->string());
    const json f = json::parse(in, nullptr, false);
    if (f.is_discarded() || !f.is_object()) throw Error(ErrorKind::Config, "config file is not a JSON object: " + file->string());
    // unknown keys must survive the merge so they are rejected below
    tree.merge_patch(f);
  }
  for (const auto& o : overrides) apply_override(tree, o);
  ToolConfig c = tool_config_from_json(tree);
  c.validate();
  return c;
}

// --- corpus ----------------------------------------------------------------------

json to_json(const VideoManifest& m) {
  json boxes = json::array();
  for (const auto& b : m.crop_boxes) boxes.push_back({b.x, b.y, b.width, b.height});
  return {{"name", m.name},         {"video", m.video.string()}, {"landmarks", m.landmarks.string()},
          {"hash", m.hash},         {"detector", m.detector},    {"frames", m.frames},
          {"resolution", m.resolution}, {"crop_boxes", boxes}};
}

VideoManifest manifest_from_json(const json& j) {
  try {
    VideoManifest m;
    m.name = j.at("name").get<std::string>();
    m.video = j.at("video").get<std::string>();
    m.landmarks = j.at("landmarks").get<std::string>();
    m.hash = j.at("hash").get<std::string>();
    m.detector = j.at("detector").get<std::string>();
    m.frames = j.at("frames").get<std::size_t>();
    m.resolution = j.at("resolution").get<int>();
    for (const auto& b : j.at("crop_boxes")) m.crop_boxes.emplace_back(b[0], b[1], b[2], b[3]);
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Version, std::string("malformed manifest: ") + e.what());
  }
}

std::vector<fs::path> list_videos(const fs::path& dir, const fs::path& exclude) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorKind::Config, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  const fs::path excluded = exclude.empty() ? fs::path{} : fs::weakly_canonical(exclude, ec);
  for (const auto& entry : fs::directory_iterator(dir)) {
    const fs::path p = entry.path();
    if (p.filename().string().starts_with(".")) continue;
    if (!excluded.empty() && fs::weakly_canonical(p, ec) == excluded) continue;
    if ((entry.is_regular_file() && is_container_path(p)) || entry.is_directory()) out.push_back(p);
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::string video_name(const fs::path& p) { return p.stem().string(); }

fs::path manifest_path(const ToolConfig& c, const fs::path& video) {
  return fs::path(c.paths.cache) / (video_name(video) + ".json");
}

std::optional<VideoManifest> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) return std::nullopt;
  try {
    return manifest_from_json(j);
  } catch (const Error&) {
    return std::nullopt;
  }
}

void write_json_file(const json& j, const fs::path& path) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

bool manifest_current(const std::optional<VideoManifest>& m, const std::string& hash, const ToolConfig& c) {
  return m && m->hash == hash && m->detector == make_landmark_detector(c.metrics.landmarks)->name() &&
         m->resolution == c.model.resolution && fs::exists(m->landmarks);
}

}  // namespace

std::vector<TrainingClip> load_corpus(const ToolConfig& c) {
  if (c.paths.corpus.empty()) throw Error(ErrorKind::Config, "paths.corpus is not set");
  if (!fs::is_directory(c.paths.corpus)) throw Error(ErrorKind::Config, "corpus directory not found: " + c.paths.corpus);
  std::vector<TrainingClip> corpus;
  for (const auto& v : list_videos(c.paths.corpus, c.paths.cache)) {
    const auto m = read_manifest(manifest_path(c, v));
    if (!manifest_current(m, video_content_hash(v), c))
      throw Error(ErrorKind::Config, "no up-to-date landmark cache for " + v.string() + "; run preprocess first");
    TrainingClip clip{m->name, load_video(v), read_landmark_cache(m->landmarks)};
    if (clip.landmarks.size() != clip.video.size())
      throw Error(ErrorKind::Version, "landmark cache length differs from video " + v.string());
    corpus.push_back(std::move(clip));
  }
  if (corpus.empty()) throw Error(ErrorKind::Config, "corpus directory has no videos: " + c.paths.corpus);
  return corpus;
}

// --- ablation scoring --------------------------------------------------------------

json VariantScore::to_json() const {
  return {{"wobble", wobble}, {"fvd", fvd}, {"per_clip_wobble", per_clip_wobble}, {"fallback_frames", fallback_frames}};
}

VariantScore score_variant(BlendNet& model, const std::vector<TrainingClip>& corpus, const ToolConfig& c) {
  if (corpus.empty()) throw Error(ErrorKind::Config, "empty corpus");
  const auto detector = make_landmark_detector(c.metrics.landmarks);
  const auto features = make_video_features(c.metrics.video_features);
  VariantScore score;
  std::vector<FrameSequence> real, generated;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const TrainingClip& target = corpus[i];
    const TrainingClip& source = corpus[(i + 1) % corpus.size()];
    const SwapResult r = swap_videos(model, source.video, source.landmarks, target.video, target.landmarks,
                                     {.resample = true, .seed = c.seed});
    // undetected output frames take the target's landmarks (zero wobble
    // contribution there); the count is reported
    LandmarkTrack out_lm;
    for (std::size_t f = 0; f < r.output.size(); ++f) {
      auto s = detector->detect(r.output[f]);
      if (!s) {
        s = target.landmarks.points[f];
        ++score.fallback_frames;
      }
      out_lm.points.push_back(*s);
      out_lm.confidence.push_back(1.0f);
    }
    score.per_clip_wobble.push_back(wobble_statistic(out_lm, target.landmarks));
    for (auto& w : sliding_windows(target.video, c.metrics.fvd_window, c.metrics.fvd_stride)) real.push_back(w);
    for (auto& w : sliding_windows(r.output, c.metrics.fvd_window, c.metrics.fvd_stride)) generated.push_back(w);
  }
  for (double w : score.per_clip_wobble) score.wobble += w / static_cast<double>(corpus.size());
  score.fvd = fvd(real, generated, *features);
  return score;
}

// --- commands ------------------------------------------------------------------------

namespace {

struct Common {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--set", c.set, "override, e.g. --set training.steps=10 (repeatable)");
  cmd->add_option("--seed", c.seed, "global seed");
}

ToolConfig resolve(const Common& c, std::vector<std::string> flags) {
  std::vector<std::string> overrides = c.set;
  if (c.seed) overrides.push_back("seed=" + std::to_string(*c.seed));
  overrides.insert(overrides.end(), flags.begin(), flags.end());
  return load_tool_config(c.config.empty() ? std::nullopt : std::optional<fs::path>(c.config), overrides);
}

std::string json_string(const std::string& s) { return json(s).dump(); }

int cmd_preprocess(const ToolConfig& c, const fs::path& dir, std::ostream& out, std::ostream& err) {
  if (!fs::is_directory(dir)) throw Error(ErrorKind::Config, "videos directory not found: " + dir.string());
  const auto videos = list_videos(dir, c.paths.cache);
  if (videos.empty()) throw Error(ErrorKind::Config, "no videos in " + dir.string());
  fs::create_directories(c.paths.cache);
  const auto detector = make_landmark_detector(c.metrics.landmarks);
  json processed = json::array(), skipped = json::array(), failed = json::array();
  int code = 0;
  for (const auto& v : videos) {
    try {
      const std::string hash = video_content_hash(v);
      const fs::path mpath = manifest_path(c, v);
      if (manifest_current(read_manifest(mpath), hash, c)) {
        skipped.push_back(v.string());
        continue;
      }
      const FrameSequence video = load_video(v);
      const LandmarkTrack track = detect_landmarks(video, *detector);
      VideoManifest m;
      m.name = video_name(v);
      m.video = v;
      m.landmarks = fs::path(c.paths.cache) / (m.name + ".lmk");
      m.hash = hash;
      m.detector = detector->name();
      m.frames = video.size();
      m.resolution = c.model.resolution;
      for (const auto& s : track.points) m.crop_boxes.push_back(crop_box(s, video.width(), video.height()));
      write_landmark_cache(track, m.landmarks);
      json j = to_json(m);
      j["tool_config"] = to_json(c);
      write_json_file(j, mpath);
      processed.push_back(v.string());
    } catch (const Error& e) {
      json rec = json::parse(e.record());
      rec["video"] = v.string();
      err << rec.dump() << "\n";
      failed.push_back(v.string());
      if (code == 0) code = exit_code(e.kind());
    }
  }
  out << json{{"processed", processed}, {"skipped", skipped}, {"failed", failed}}.dump() << "\n";
  return code;
}

TrainLoopResult run_training(const ToolConfig& c, const fs::path& checkpoint_dir,
                             const std::optional<fs::path>& resume, std::ostream& err) {
  const auto corpus = load_corpus(c);
  TrainLoopOptions opts;
  opts.checkpoint_dir = checkpoint_dir;
  opts.log_path = c.paths.log.empty() ? checkpoint_dir / "train.jsonl" : fs::path(c.paths.log);
  opts.resume_from = resume;
  opts.corruption = c.corruption;
  const std::int64_t every = std::max<std::int64_t>(1, c.training.steps / 20);
  opts.on_step = [&](std::int64_t step, std::size_t clip, const LossReport& r) {
    if (step % every == 0 || step == c.training.steps)
      err << json{{"step", step}, {"clip", corpus[clip].name}, {"total", r.total}}.dump() << "\n";
  };
  fs::create_directories(checkpoint_dir);
  return train_loop(corpus, c.model, c.training, opts, to_json(c));
}

json train_summary(const TrainLoopResult& r) {
  json ckpts = json::array();
  for (const auto& p : r.checkpoints) ckpts.push_back(p.string());
  return {{"first_step", r.first_step}, {"last_step", r.last_step}, {"checkpoints", ckpts}};
}

FrameSequence side_by_side(const std::vector<const FrameSequence*>& panels) {
  std::vector<cv::Mat> frames;
  for (std::size_t i = 0; i < panels.front()->size(); ++i) {
    std::vector<cv::Mat> row;
    for (const auto* p : panels) row.push_back((*p)[i]);
    cv::Mat joined;
    cv::hconcat(row, joined);
    frames.push_back(joined);
  }
  return FrameSequence(frames, panels.front()->fps());
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Temporal face-swap toolkit"};
  app.require_subcommand(1);

  Common c_pre, c_train, c_swap, c_eval, c_prev, c_abl;

  auto* pre = app.add_subcommand("preprocess", "detect landmarks and write caches for a directory of videos");
  std::string pre_dir;
  pre->add_option("videos", pre_dir, "directory of videos")->required();
  add_common(pre, c_pre);

  auto* train = app.add_subcommand("train", "self-supervised training on paths.corpus");
  std::optional<std::int64_t> train_steps;
  std::string train_corpus, train_resume;
  bool train_no_temporal = false;
  train->add_option("--steps", train_steps, "total steps (training.steps)");
  train->add_option("--corpus", train_corpus, "corpus directory (paths.corpus)");
  train->add_option("--resume", train_resume, "checkpoint to resume from");
  train->add_flag("--no-temporal", train_no_temporal, "disable the temporal modules (model.temporal=false)");
  add_common(train, c_train);

  auto* swp = app.add_subcommand("swap", "swap the source face into the target video");
  std::string sw_source, sw_target, sw_output, sw_ckpt, sw_format;
  bool sw_resample = false;
  int sw_benchmark = 0, sw_crf = 0;
  swp->add_option("--source", sw_source)->required();
  swp->add_option("--target", sw_target)->required();
  swp->add_option("--output", sw_output)->required();
  swp->add_option("--checkpoint", sw_ckpt)->required();
  swp->add_flag("--resample", sw_resample, "stretch the source to the target's frame count");
  swp->add_option("--benchmark", sw_benchmark, "also time N model forwards");
  swp->add_option("--crf", sw_crf, "x264 quality (0 lossless)");
  swp->add_option("--pixel-format", sw_format, "rgb24 | yuv444p | yuv420p");
  add_common(swp, c_swap);

  auto* eval = app.add_subcommand("evaluate", "score a swap");
  std::string ev_source, ev_target, ev_output, ev_report;
  bool ev_resample = false;
  eval->add_option("--source", ev_source)->required();
  eval->add_option("--target", ev_target)->required();
  eval->add_option("--output", ev_output)->required();
  eval->add_option("--report", ev_report, "also write the report here");
  eval->add_flag("--resample", ev_resample, "stretch the source to the output's frame count");
  add_common(eval, c_eval);

  auto* prev = app.add_subcommand("corrupt-preview", "clean crop | corrupted foreground | background, side by side");
  std::string pv_input, pv_output;
  prev->add_option("--input", pv_input)->required();
  prev->add_option("--output", pv_output)->required();
  add_common(prev, c_prev);

  auto* abl = app.add_subcommand("ablate", "train and score the model with and without temporal modules");
  bool ab_no_temporal = false, ab_compare = false, ab_skip_train = false;
  abl->add_flag("--no-temporal", ab_no_temporal, "ablated variant (temporal modules are the identity)");
  abl->add_flag("--compare", ab_compare, "run both variants and report the difference");
  abl->add_flag("--skip-train", ab_skip_train, "score existing checkpoints only");
  add_common(abl, c_abl);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", "usage"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }

  try {
    if (*pre) return cmd_preprocess(resolve(c_pre, {}), pre_dir, out, err);

    if (*train) {
      std::vector<std::string> flags;
      if (train_steps) flags.push_back("training.steps=" + std::to_string(*train_steps));
      if (!train_corpus.empty()) flags.push_back("paths.corpus=" + json_string(train_corpus));
      if (train_no_temporal) flags.push_back("model.temporal=false");
      const ToolConfig cfg = resolve(c_train, flags);
      const auto resume = train_resume.empty() ? std::nullopt : std::optional<fs::path>(train_resume);
      out << train_summary(run_training(cfg, cfg.paths.checkpoints, resume, err)).dump() << "\n";
      return 0;
    }

    if (*swp) {
      const ToolConfig cfg = resolve(c_swap, {});
      SwapJob job;
      job.source_path = sw_source;
      job.target_path = sw_target;
      job.output_path = sw_output;
      job.checkpoint_path = sw_ckpt;
      job.resample = sw_resample;
      job.seed = cfg.seed;
      job.landmark_backend = cfg.metrics.landmarks;
      job.write_options.crf = sw_crf;
      if (!sw_format.empty()) job.write_options.pixel_format = sw_format;
      const SwapResult r = swap(job);
      json boxes = json::array();
      for (const auto& b : r.crop_boxes) boxes.push_back({b.x, b.y, b.width, b.height});
      json rep = {{"output", sw_output}, {"frames", r.output.size()}, {"windows", r.windows},
                  {"crop_boxes", boxes}, {"tool_config", to_json(cfg)}};
      if (sw_benchmark > 0) rep["latency"] = benchmark_latency(job, sw_benchmark).to_json();
      out << rep.dump() << "\n";
      return 0;
    }

    if (*eval) {
      const ToolConfig cfg = resolve(c_eval, {});
      FrameSequence source = load_video(ev_source);
      const FrameSequence target = load_video(ev_target), output = load_video(ev_output);
      if (ev_resample && source.size() != output.size()) source = resample_frames(source, output.size());
      const auto detector = make_landmark_detector(cfg.metrics.landmarks);
      const auto embedder = make_identity_embedder(cfg.metrics.identity);
      const auto features = make_video_features(cfg.metrics.video_features);
      MetricsReport r = evaluate(source, target, output, *detector, *embedder, *features,
                                 {static_cast<std::size_t>(cfg.metrics.fvd_window),
                                  static_cast<std::size_t>(cfg.metrics.fvd_stride), cfg.metrics.output_landmarks});
      r.config = to_json(cfg);
      r.input_hashes = {{"source", video_content_hash(ev_source)},
                        {"target", video_content_hash(ev_target)},
                        {"output", video_content_hash(ev_output)}};
      const json j = r.to_json();
      if (!ev_report.empty()) write_json_file(j, ev_report);
      out << j.dump() << "\n";
      return 0;
    }

    if (*prev) {
      const ToolConfig cfg = resolve(c_prev, {});
      const FrameSequence video = load_video(pv_input);
      const auto detector = make_landmark_detector(cfg.metrics.landmarks);
      const FgBgPair pair = extract_fg_bg(video, detect_landmarks(video, *detector), cfg.model.resolution);
      const CorruptionSample sample =
          sample_corruption(cfg.corruption, static_cast<int>(video.size()), cfg.corruption.seed);
      const CorruptedForeground corrupted = apply_corruption(pair.foreground, pair.mask, sample);
      write_video(side_by_side({&pair.crop, &corrupted.frames, &pair.background}), pv_output);
      out << json{{"output", pv_output},
                  {"frames", video.size()},
                  {"rotation_deg", sample.rotation_deg},
                  {"scale", sample.scale},
                  {"k", sample.k},
                  {"k1", sample.k1},
                  {"k2", sample.k2},
                  {"tool_config", to_json(cfg)}}
                 .dump()
          << "\n";
      return 0;
    }

    if (*abl) {
      const ToolConfig base = resolve(c_abl, {});
      std::vector<bool> variants;
      if (ab_compare) variants = {true, false};
      else variants = {!ab_no_temporal};
      const auto corpus = load_corpus(base);
      json rep = {{"tool_config", to_json(base)}};
      std::map<bool, double> wobble;
      for (bool temporal : variants) {
        ToolConfig cfg = base;
        cfg.model.temporal = temporal;
        const std::string name = temporal ? "full" : "no_temporal";
        const fs::path dir = fs::path(cfg.paths.checkpoints) / name;
        cfg.paths.log = (dir / "train.jsonl").string();
        fs::path ckpt = dir / checkpoint_name(cfg.training.steps);
        if (!ab_skip_train) ckpt = run_training(cfg, dir, std::nullopt, err).checkpoints.back();
        BlendNet model = load_checkpoint(ckpt);
        if (model->config().temporal != temporal) throw Error(ErrorKind::Version, ckpt.string() + " is the wrong variant");
        const VariantScore s = score_variant(model, corpus, cfg);
        rep[name] = s.to_json();
        rep[name]["checkpoint"] = ckpt.string();
        wobble[temporal] = s.wobble;
      }
      if (ab_compare) {
        rep["wobble_difference"] = wobble[false] - wobble[true];
        rep["fvd_difference"] = rep["no_temporal"]["fvd"].get<double>() - rep["full"]["fvd"].get<double>();
      }
      out << rep.dump() << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << e.record() << "\n";
    return exit_code(e.kind());
  } catch (const c10::Error& e) {
    err << json{{"error", "internal"}, {"message", e.what_without_backtrace()}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"v2vswap"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace v2v
