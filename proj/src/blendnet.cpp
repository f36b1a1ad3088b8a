#include "v2v/blendnet.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "v2v/error.hpp"

namespace v2v {

namespace nn = torch::nn;

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::Config, "model." + m); };
  if (resolution < 8 || resolution % 8 != 0) fail("resolution must be a positive multiple of 8");
  if (codebook_size < 1) fail("codebook_size must be >= 1");
  if (embed_dim < 1) fail("embed_dim must be >= 1");
  if (channels < 2 || channels % 2 != 0) fail("channels must be an even number >= 2");
  if (residual_channels < 1 || residual_blocks < 0) fail("residual sizes must be positive");
  for (int k : temporal_kernel)
    if (k < 1 || k % 2 == 0) fail("temporal_kernel entries must be odd and positive");
  if (temporal_blocks < 0) fail("temporal_blocks must be >= 0");
  if (!(commitment_weight >= 0)) fail("commitment_weight must be >= 0");
  if (!(ema_decay > 0 && ema_decay < 1)) fail("ema_decay must lie in (0, 1)");
  if (!(ema_epsilon > 0)) fail("ema_epsilon must be > 0");
  if (clip_length < 2) fail("clip_length must be >= 2");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"resolution", c.resolution},
                     {"codebook_size", c.codebook_size},
                     {"embed_dim", c.embed_dim},
                     {"channels", c.channels},
                     {"residual_channels", c.residual_channels},
                     {"residual_blocks", c.residual_blocks},
                     {"temporal_kernel", c.temporal_kernel},
                     {"temporal_blocks", c.temporal_blocks},
                     {"temporal", c.temporal},
                     {"commitment_weight", c.commitment_weight},
                     {"ema_decay", c.ema_decay},
                     {"ema_epsilon", c.ema_epsilon},
                     {"clip_length", c.clip_length}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw Error(ErrorKind::Config, "model must be an object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "resolution") c.resolution = v.get<int>();
      else if (key == "codebook_size") c.codebook_size = v.get<int>();
      else if (key == "embed_dim") c.embed_dim = v.get<int>();
      else if (key == "channels") c.channels = v.get<int>();
      else if (key == "residual_channels") c.residual_channels = v.get<int>();
      else if (key == "residual_blocks") c.residual_blocks = v.get<int>();
      else if (key == "temporal_kernel") c.temporal_kernel = v.get<std::array<int, 3>>();
      else if (key == "temporal_blocks") c.temporal_blocks = v.get<int>();
      else if (key == "temporal") c.temporal = v.get<bool>();
      else if (key == "commitment_weight") c.commitment_weight = v.get<double>();
      else if (key == "ema_decay") c.ema_decay = v.get<double>();
      else if (key == "ema_epsilon") c.ema_epsilon = v.get<double>();
      else if (key == "clip_length") c.clip_length = v.get<int>();
      else throw Error(ErrorKind::Config, "unknown key model." + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Config, std::string("model: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

torch::Tensor nearest_codes(const torch::Tensor& flat, const torch::Tensor& embed) {
  torch::NoGradGuard guard;
  const auto x = flat.to(embed.scalar_type()).contiguous();
  const std::int64_t m = x.size(0), k = embed.size(0), d = embed.size(1);
  auto codes = torch::empty({m}, torch::kLong);
  // bound the M x K x D difference tensor to ~16M elements per chunk
  const std::int64_t chunk = std::max<std::int64_t>(1, (std::int64_t{1} << 24) / std::max<std::int64_t>(1, k * d));
  const auto e = embed.unsqueeze(0);
  for (std::int64_t start = 0; start < m; start += chunk) {
    const std::int64_t len = std::min(chunk, m - start);
    const auto diff = x.narrow(0, start, len).unsqueeze(1) - e;
    const auto dist = diff.mul(diff).sum(-1);
    codes.narrow(0, start, len).copy_(std::get<1>(dist.min(1)));
  }
  return codes;
}

namespace {

// N x D x h x w -> (N*h*w) x D
torch::Tensor flatten_features(const torch::Tensor& f) {
  return f.permute({0, 2, 3, 1}).reshape({-1, f.size(1)});
}

}  // namespace

QuantizeResult quantize(const torch::Tensor& features, const torch::Tensor& embed) {
  if (features.dim() != 4 || features.size(1) != embed.size(1))
    throw Error(ErrorKind::Shape, "quantize: features must be N x D x h x w with D = codebook dim");
  const auto flat = flatten_features(features);
  const auto codes = nearest_codes(flat, embed);
  const auto n = features.size(0), h = features.size(2), w = features.size(3);
  const auto q = embed.index_select(0, codes).to(features.scalar_type()).view({n, h, w, -1}).permute({0, 3, 1, 2});
  QuantizeResult r;
  r.commit_loss = (features - q.detach()).pow(2).mean();
  // value is exactly q (x - x.detach() is exactly zero); gradient is identity
  r.quantized = q.detach() + (features - features.detach());
  r.codes = codes.view({n, h, w});
  return r;
}

CodebookImpl::CodebookImpl(int codebook_size, int embed_dim, double decay, double epsilon)
    : codebook_size_(codebook_size), embed_dim_(embed_dim), decay_(decay), epsilon_(epsilon) {
  auto init = torch::randn({codebook_size, embed_dim});
  embed_ = register_buffer("embed", init);
  // unit counts so embed_avg / cluster_size starts out equal to embed
  cluster_size_ = register_buffer("cluster_size", torch::ones({codebook_size}));
  embed_avg_ = register_buffer("embed_avg", init.clone());
  usage_ = register_buffer("usage", torch::zeros({codebook_size}));
}

QuantizeResult CodebookImpl::forward(const torch::Tensor& features) {
  QuantizeResult r = quantize(features, embed_);
  if (is_training()) ema_update(flatten_features(features.detach()), r.codes.flatten());
  return r;
}

void CodebookImpl::ema_update(const torch::Tensor& flat_in, const torch::Tensor& codes) {
  torch::NoGradGuard guard;
  const auto flat = flat_in.to(embed_.scalar_type());
  const auto onehot = torch::zeros({flat.size(0), codebook_size_}, flat.options())
                          .scatter_(1, codes.unsqueeze(1), 1.0);
  const auto counts = onehot.sum(0);
  const auto sums = onehot.t().mm(flat);
  cluster_size_.mul_(decay_).add_(counts, 1.0 - decay_);
  embed_avg_.mul_(decay_).add_(sums, 1.0 - decay_);
  const auto total = cluster_size_.sum();
  // Laplace smoothing keeps unused entries from dividing by zero
  const auto smoothed = (cluster_size_ + epsilon_) / (total + codebook_size_ * epsilon_) * total;
  embed_.copy_(embed_avg_ / smoothed.unsqueeze(1));
  usage_.add_(counts);

  constexpr std::int64_t kRecent = 1024;
  if (flat.size(0) <= kRecent) {
    recent_ = flat.clone();
  } else {
    const auto stride = flat.size(0) / kRecent;
    recent_ = flat.slice(0, 0, stride * kRecent, stride).clone();
  }
}

int CodebookImpl::restart_dead_codes(std::uint64_t seed) {
  torch::NoGradGuard guard;
  int restarted = 0;
  if (recent_.defined() && recent_.size(0) > 0) {
    std::mt19937_64 rng(seed);
    const auto dead = (usage_ == 0).nonzero().flatten();
    const auto* idx = dead.data_ptr<std::int64_t>();
    for (std::int64_t i = 0; i < dead.numel(); ++i) {
      const auto row = static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(recent_.size(0)));
      const auto sample = recent_[row];
      if (!torch::isfinite(sample).all().item<bool>()) continue;
      embed_[idx[i]].copy_(sample);
      embed_avg_[idx[i]].copy_(sample);
      cluster_size_[idx[i]].fill_(1.0);
      ++restarted;
    }
  }
  usage_.zero_();
  return restarted;
}

// ---------------------------------------------------------------------------

ResBlockImpl::ResBlockImpl(int channels, int hidden)
    : conv1(nn::Conv2dOptions(channels, hidden, 3).padding(1)),
      conv2(nn::Conv2dOptions(hidden, channels, 1)) {
  register_module("conv1", conv1);
  register_module("conv2", conv2);
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  return x + conv2(torch::relu(conv1(torch::relu(x))));
}

EncoderImpl::EncoderImpl(int in, int ch, int res_blocks, int res_ch, int stride) {
  if (stride == 4) {
    body->push_back(nn::Conv2d(nn::Conv2dOptions(in, ch / 2, 4).stride(2).padding(1)));
    body->push_back(nn::ReLU());
    body->push_back(nn::Conv2d(nn::Conv2dOptions(ch / 2, ch, 4).stride(2).padding(1)));
    body->push_back(nn::ReLU());
    body->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).padding(1)));
  } else {
    body->push_back(nn::Conv2d(nn::Conv2dOptions(in, ch / 2, 4).stride(2).padding(1)));
    body->push_back(nn::ReLU());
    body->push_back(nn::Conv2d(nn::Conv2dOptions(ch / 2, ch, 3).padding(1)));
  }
  for (int i = 0; i < res_blocks; ++i) body->push_back(ResBlock(ch, res_ch));
  body->push_back(nn::ReLU());
  register_module("body", body);
}

DecoderImpl::DecoderImpl(int in, int out, int ch, int res_blocks, int res_ch, int stride) {
  body->push_back(nn::Conv2d(nn::Conv2dOptions(in, ch, 3).padding(1)));
  for (int i = 0; i < res_blocks; ++i) body->push_back(ResBlock(ch, res_ch));
  body->push_back(nn::ReLU());
  if (stride == 4) {
    body->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch, ch / 2, 4).stride(2).padding(1)));
    body->push_back(nn::ReLU());
    body->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch / 2, out, 4).stride(2).padding(1)));
  } else {
    body->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch, out, 4).stride(2).padding(1)));
  }
  register_module("body", body);
}

TemporalModuleImpl::TemporalModuleImpl(int channels, std::array<int, 3> k, int blocks, bool enabled)
    : enabled_(enabled) {
  const std::vector<std::int64_t> kernel{k[0], k[1], k[2]}, pad{k[0] / 2, k[1] / 2, k[2] / 2};
  for (int i = 0; i < 2 * blocks; ++i)
    convs->push_back(nn::Conv3d(nn::Conv3dOptions(channels, channels, kernel).padding(pad)));
  register_module("convs", convs);
}

torch::Tensor TemporalModuleImpl::forward(const torch::Tensor& x) {
  if (!enabled_ || convs->size() == 0) return x;
  if (x.size(0) < 2) throw Error(ErrorKind::TemporalContext, "temporal module needs at least 2 frames");
  // N x C x h x w -> 1 x C x N x h x w
  auto v = x.permute({1, 0, 2, 3}).unsqueeze(0);
  for (std::size_t i = 0; i + 1 < convs->size(); i += 2) {
    auto h = convs[i]->as<nn::Conv3d>()->forward(torch::relu(v));
    h = convs[i + 1]->as<nn::Conv3d>()->forward(torch::relu(h));
    v = v + h;
  }
  return v.squeeze(0).permute({1, 0, 2, 3});
}

// ---------------------------------------------------------------------------

BlendNetImpl::BlendNetImpl(const ModelConfig& c) : config_(c) {
  c.validate();
  const int ch = c.channels, d = c.embed_dim;
  enc_b = register_module("enc_b", Encoder(6, ch, c.residual_blocks, c.residual_channels, 4));
  enc_t = register_module("enc_t", Encoder(ch, ch, c.residual_blocks, c.residual_channels, 2));
  quantize_conv_t = register_module("quantize_conv_t", nn::Conv2d(nn::Conv2dOptions(ch, d, 1)));
  temporal_t = register_module("temporal_t", TemporalModule(d, c.temporal_kernel, c.temporal_blocks, c.temporal));
  quantize_t = register_module("quantize_t", Codebook(c.codebook_size, d, c.ema_decay, c.ema_epsilon));
  dec_t = register_module("dec_t", Decoder(d, d, ch, c.residual_blocks, c.residual_channels, 2));
  quantize_conv_b = register_module("quantize_conv_b", nn::Conv2d(nn::Conv2dOptions(d + ch, d, 1)));
  temporal_b = register_module("temporal_b", TemporalModule(d, c.temporal_kernel, c.temporal_blocks, c.temporal));
  quantize_b = register_module("quantize_b", Codebook(c.codebook_size, d, c.ema_decay, c.ema_epsilon));
  upsample_t = register_module(
      "upsample_t", nn::ConvTranspose2d(nn::ConvTranspose2dOptions(d, d, 4).stride(2).padding(1)));
  dec = register_module("dec", Decoder(2 * d, 3, ch, c.residual_blocks, c.residual_channels, 4));
}

void BlendNetImpl::check_input(const torch::Tensor& input) const {
  const int r = config_.resolution;
  if (input.dim() != 4 || input.size(1) != 6 || input.size(2) != r || input.size(3) != r)
    throw Error(ErrorKind::Shape, "blend input must be N x 6 x " + std::to_string(r) + " x " +
                                      std::to_string(r) + ", got " + c10::str(input.sizes()));
  if (input.size(0) < 2) throw Error(ErrorKind::TemporalContext, "blend input needs N >= 2 frames");
}

std::pair<torch::Tensor, torch::Tensor> BlendNetImpl::encode(const torch::Tensor& input) {
  check_input(input);
  auto bottom = enc_b->forward(input);
  auto top = enc_t->forward(bottom);
  return {bottom, top};
}

Latents BlendNetImpl::quantize_latents(const torch::Tensor& input) {
  auto [bottom, top] = encode(input);
  Latents l;
  auto qt = quantize_t->forward(temporal_t->forward(quantize_conv_t->forward(top)));
  const auto dt = dec_t->forward(qt.quantized);
  auto qb = quantize_b->forward(temporal_b->forward(quantize_conv_b->forward(torch::cat({dt, bottom}, 1))));
  l.quantized_top = qt.quantized;
  l.codes_top = qt.codes;
  l.commit_top = qt.commit_loss;
  l.quantized_bottom = qb.quantized;
  l.codes_bottom = qb.codes;
  l.commit_bottom = qb.commit_loss;
  return l;
}

torch::Tensor BlendNetImpl::decode(const torch::Tensor& qt, const torch::Tensor& qb) {
  if (qt.dim() != 4 || qb.dim() != 4 || qt.size(0) != qb.size(0) || qt.size(1) != config_.embed_dim ||
      qb.size(1) != config_.embed_dim || qb.size(2) != 2 * qt.size(2) || qb.size(3) != 2 * qt.size(3))
    throw Error(ErrorKind::Shape, "decode: top grid must be half the bottom grid, got " +
                                      c10::str(qt.sizes()) + " and " + c10::str(qb.sizes()));
  return torch::tanh(dec->forward(torch::cat({upsample_t->forward(qt), qb}, 1)));
}

BlendOutput BlendNetImpl::forward(const torch::Tensor& input) {
  BlendOutput out;
  out.latents = quantize_latents(input);
  out.output = decode(out.latents.quantized_top, out.latents.quantized_bottom);
  return out;
}

int BlendNetImpl::restart_dead_codes(std::uint64_t seed) {
  return quantize_t->restart_dead_codes(seed) + quantize_b->restart_dead_codes(seed ^ 0x9e3779b97f4a7c15ULL);
}

torch::Tensor to_unit_range(const torch::Tensor& t) { return t.to(torch::kFloat32) / 127.5 - 1.0; }

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'V', '2', 'V', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error(ErrorKind::Version, "truncated checkpoint");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

struct Header {
  nlohmann::json json;
  std::uint64_t payload_offset;
};

Header read_header(std::istream& is, const std::string& name) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error(ErrorKind::Version, "not a v2v checkpoint: " + name);
  const auto version = read_u64(is);
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::Version, "checkpoint " + name + " has format version " + std::to_string(version) +
                                        ", expected " + std::to_string(kCheckpointVersion));
  const auto len = read_u64(is);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) throw Error(ErrorKind::Version, "truncated checkpoint");
  Header h;
  try {
    h.json = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Version, "corrupt checkpoint header in " + name);
  }
  h.payload_offset = 24 + len;
  return h;
}

std::vector<std::pair<std::string, torch::Tensor>> state_tensors(BlendNetImpl& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& p : model.named_parameters(true)) out.emplace_back(p.key(), p.value());
  for (const auto& b : model.named_buffers(true)) out.emplace_back(b.key(), b.value());
  return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, BlendNet& model, const CheckpointMeta& meta,
                     torch::optim::Optimizer* optimizer) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian");
  nlohmann::json header;
  header["model"] = meta.model;
  header["tool_config"] = meta.tool_config;
  header["step"] = meta.step;
  header["extra"] = meta.extra;
  std::uint64_t offset = 0;
  nlohmann::json index = nlohmann::json::array();
  const auto tensors = state_tensors(*model);
  std::vector<torch::Tensor> blobs;
  for (const auto& [name, t] : tensors) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    const std::uint64_t bytes = static_cast<std::uint64_t>(c.numel()) * sizeof(float);
    index.push_back({{"name", name}, {"shape", c.sizes().vec()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
    blobs.push_back(c);
  }
  header["tensors"] = index;
  std::string opt_bytes;
  if (optimizer) {
    torch::serialize::OutputArchive archive;
    optimizer->save(archive);
    std::ostringstream os;
    archive.save_to(os);
    opt_bytes = os.str();
  }
  header["optimizer"] = {{"offset", offset}, {"bytes", opt_bytes.size()}};

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error(ErrorKind::Io, "cannot write checkpoint " + path.string());
    const std::string text = header.dump();
    os.write(kMagic, 8);
    write_u64(os, kCheckpointVersion);
    write_u64(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& b : blobs)
      os.write(static_cast<const char*>(b.data_ptr()), static_cast<std::streamsize>(b.numel() * sizeof(float)));
    os.write(opt_bytes.data(), static_cast<std::streamsize>(opt_bytes.size()));
    if (!os) throw Error(ErrorKind::Io, "failed writing checkpoint " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot move checkpoint into place: " + path.string());
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
  const Header h = read_header(is, path.string());
  CheckpointMeta meta;
  try {
    meta.model = h.json.at("model").get<ModelConfig>();
    meta.tool_config = h.json.at("tool_config");
    meta.step = h.json.at("step").get<std::int64_t>();
    meta.extra = h.json.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Version, "checkpoint header of " + path.string() + " is incompatible: " + e.what());
  } catch (const Error& e) {
    throw Error(ErrorKind::Version, "checkpoint model config of " + path.string() + " is incompatible: " + e.what());
  }
  return meta;
}

BlendNet load_checkpoint(const std::filesystem::path& path, CheckpointMeta* meta_out) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  std::ifstream is(path, std::ios::binary);
  const Header h = read_header(is, path.string());
  BlendNet model(meta.model);
  torch::NoGradGuard guard;
  std::map<std::string, nlohmann::json> index;
  for (const auto& e : h.json.at("tensors")) index[e.at("name").get<std::string>()] = e;
  for (auto& [name, t] : state_tensors(*model)) {
    const auto it = index.find(name);
    if (it == index.end()) throw Error(ErrorKind::Version, "checkpoint lacks tensor " + name);
    const auto shape = it->second.at("shape").get<std::vector<std::int64_t>>();
    if (shape != t.sizes().vec()) throw Error(ErrorKind::Version, "checkpoint tensor " + name + " has wrong shape");
    auto buf = torch::empty(shape, torch::kFloat32);
    is.seekg(static_cast<std::streamoff>(h.payload_offset + it->second.at("offset").get<std::uint64_t>()));
    if (!is.read(static_cast<char*>(buf.data_ptr()), static_cast<std::streamsize>(buf.numel() * sizeof(float))))
      throw Error(ErrorKind::Version, "truncated checkpoint tensor " + name);
    t.copy_(buf);
  }
  if (meta_out) *meta_out = meta;
  return model;
}

bool load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
  const Header h = read_header(is, path.string());
  const auto& o = h.json.at("optimizer");
  const auto bytes = o.at("bytes").get<std::uint64_t>();
  if (bytes == 0) return false;
  std::string data(bytes, '\0');
  is.seekg(static_cast<std::streamoff>(h.payload_offset + o.at("offset").get<std::uint64_t>()));
  if (!is.read(data.data(), static_cast<std::streamsize>(bytes)))
    throw Error(ErrorKind::Version, "truncated optimizer state in " + path.string());
  std::istringstream in(data);
  torch::serialize::InputArchive archive;
  archive.load_from(in);
  optimizer.load(archive);
  return true;
}

}  // namespace v2v
