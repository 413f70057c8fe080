#include "midl/model.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "midl/common.hpp"
#include "midl/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint and feature files are little-endian");

namespace midl {

const char* to_string(Modality m) {
  switch (m) {
    case Modality::A: return "A";
    case Modality::V: return "V";
    case Modality::AV: return "AV";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (audio_dim < 1 || video_dim < 1 || hidden_dim < 1 || encoder_layers < 1)
    throw ConfigError("model: all dimensions must be >= 1");
  if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
}

Value affine(const Value& x, const Value& w, const Value& b) {
  return add(matmul(x, w), bcast_rows(b, x.rows()));
}

Value layer_norm(const Value& x, const Value& gain, const Value& shift, double eps) {
  const Index d = x.cols();
  const Index b = x.rows();
  Value centered = sub(x, bcast_cols(row_mean(x), d));
  Value inv_std = rsqrt(add_scalar(row_mean(mul(centered, centered)), eps));
  Value normed = mul(centered, bcast_cols(inv_std, d));
  return add(mul(normed, bcast_rows(gain, b)), bcast_rows(shift, b));
}

namespace {

Value init_affine_weight(Index fan_in, Index fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return parameter(Tensor::uniform(fan_in, fan_out, -bound, bound, rng));
}

Value init_affine_bias(Index fan_in, Index fan_out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return parameter(Tensor::uniform(1, fan_out, -bound, bound, rng));
}

}  // namespace

MultimodalClassifier MultimodalClassifier::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, kSeedInit));
  MultimodalClassifier m;
  m.cfg_ = cfg;

  auto make_encoder = [&](Index in_dim) {
    std::vector<Layer> enc;
    Index d = in_dim;
    for (Index l = 0; l < cfg.encoder_layers; ++l) {
      Layer layer;
      layer.w = init_affine_weight(d, cfg.hidden_dim, rng);
      layer.b = init_affine_bias(d, cfg.hidden_dim, rng);
      layer.gain = parameter(Tensor::ones(1, cfg.hidden_dim));
      layer.shift = parameter(Tensor::zeros(1, cfg.hidden_dim));
      enc.push_back(layer);
      d = cfg.hidden_dim;
    }
    return enc;
  };

  m.audio_enc_ = make_encoder(cfg.audio_dim);
  m.video_enc_ = make_encoder(cfg.video_dim);
  if (cfg.fusion == Fusion::Concat) {
    m.fuse_w_ = init_affine_weight(2 * cfg.hidden_dim, cfg.hidden_dim, rng);
    m.fuse_b_ = init_affine_bias(2 * cfg.hidden_dim, cfg.hidden_dim, rng);
  } else {
    m.gate_w_ = init_affine_weight(2 * cfg.hidden_dim, cfg.hidden_dim, rng);
    m.gate_b_ = init_affine_bias(2 * cfg.hidden_dim, cfg.hidden_dim, rng);
  }
  m.head_w_ = init_affine_weight(cfg.hidden_dim, cfg.num_classes, rng);
  m.head_b_ = init_affine_bias(cfg.hidden_dim, cfg.num_classes, rng);
  m.register_params();
  return m;
}

void MultimodalClassifier::register_params() {
  params_.clear();
  auto reg = [&](const std::string& name, const Value& v, bool is_norm) {
    params_.push_back({name, v, is_norm});
  };
  auto reg_encoder = [&](const char* prefix, const std::vector<Layer>& enc) {
    for (std::size_t l = 0; l < enc.size(); ++l) {
      const std::string base = std::string(prefix) + ".l" + std::to_string(l);
      reg(base + ".w", enc[l].w, false);
      reg(base + ".b", enc[l].b, false);
      reg(base + ".norm_gain", enc[l].gain, true);
      reg(base + ".norm_shift", enc[l].shift, true);
    }
  };
  reg_encoder("enc_audio", audio_enc_);
  reg_encoder("enc_video", video_enc_);
  if (cfg_.fusion == Fusion::Concat) {
    reg("fusion.w", fuse_w_, false);
    reg("fusion.b", fuse_b_, false);
  } else {
    reg("gate.w", gate_w_, false);
    reg("gate.b", gate_b_, false);
  }
  reg("head.w", head_w_, false);
  reg("head.b", head_b_, false);
}

Value MultimodalClassifier::encode(const Value& x, const std::vector<Layer>& enc) const {
  Value h = x;
  for (const Layer& layer : enc)
    h = relu(layer_norm(affine(h, layer.w, layer.b), layer.gain, layer.shift));
  return h;
}

Value MultimodalClassifier::forward(const Tensor& audio, const Tensor& video, Modality m) const {
  if (audio.cols() != cfg_.audio_dim || video.cols() != cfg_.video_dim)
    throw ConfigError("forward: feature widths " + audio.shape_str() + "/" + video.shape_str() +
                      " do not match model config");
  if (audio.rows() != video.rows())
    throw ConfigError("forward: audio and video batch sizes disagree");
  const Index batch = audio.rows();

  // Zero-fill the absent modality on the raw input, before encoding.
  Value xa = constant(m == Modality::V ? Tensor::zeros(batch, cfg_.audio_dim) : audio);
  Value xv = constant(m == Modality::A ? Tensor::zeros(batch, cfg_.video_dim) : video);

  Value ha = encode(xa, audio_enc_);
  Value hv = encode(xv, video_enc_);

  Value fused;
  if (cfg_.fusion == Fusion::Concat) {
    fused = affine(concat_cols(ha, hv), fuse_w_, fuse_b_);
  } else {
    Value gate = sigmoid(affine(concat_cols(ha, hv), gate_w_, gate_b_));
    Value ones = constant(Tensor::ones(batch, cfg_.hidden_dim));
    fused = add(mul(gate, ha), mul(sub(ones, gate), hv));
  }
  return softmax_rows(affine(fused, head_w_, head_b_));
}

Tensor MultimodalClassifier::forward_probs(const Tensor& audio, const Tensor& video,
                                           Modality m) const {
  return forward(audio, video, m).value();
}

std::vector<Value> MultimodalClassifier::select_parameters(ParameterSelection sel) const {
  std::vector<Value> out;
  for (const NamedParam& p : params_)
    if (sel == ParameterSelection::AllParameters || p.is_norm) out.push_back(p.param);
  return out;
}

std::size_t MultimodalClassifier::parameter_scalars() const {
  std::size_t n = 0;
  for (const NamedParam& p : params_) n += static_cast<std::size_t>(p.param.value().size());
  return n;
}

MultimodalClassifier MultimodalClassifier::clone() const {
  MultimodalClassifier copy;
  copy.cfg_ = cfg_;
  auto dup = [](const Value& v) { return parameter(v.value()); };
  auto dup_encoder = [&](const std::vector<Layer>& enc) {
    std::vector<Layer> out;
    for (const Layer& l : enc) out.push_back({dup(l.w), dup(l.b), dup(l.gain), dup(l.shift)});
    return out;
  };
  copy.audio_enc_ = dup_encoder(audio_enc_);
  copy.video_enc_ = dup_encoder(video_enc_);
  if (cfg_.fusion == Fusion::Concat) {
    copy.fuse_w_ = dup(fuse_w_);
    copy.fuse_b_ = dup(fuse_b_);
  } else {
    copy.gate_w_ = dup(gate_w_);
    copy.gate_b_ = dup(gate_b_);
  }
  copy.head_w_ = dup(head_w_);
  copy.head_b_ = dup(head_b_);
  copy.register_params();
  return copy;
}

void MultimodalClassifier::zero_grad() {
  for (NamedParam& p : params_) p.param.grad().array().setZero();
}

namespace {

constexpr char kCkptMagic[8] = {'M', 'I', 'D', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename T>
void write_pod(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& is, std::uint64_t& offset, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError(std::string("checkpoint: truncated reading ") + what, offset);
  offset += sizeof(T);
  return v;
}

}  // namespace

void MultimodalClassifier::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kCkptMagic, sizeof(kCkptMagic));
  write_pod(os, kCkptVersion);
  for (std::uint32_t d : {static_cast<std::uint32_t>(cfg_.audio_dim),
                          static_cast<std::uint32_t>(cfg_.video_dim),
                          static_cast<std::uint32_t>(cfg_.hidden_dim),
                          static_cast<std::uint32_t>(cfg_.num_classes),
                          static_cast<std::uint32_t>(cfg_.encoder_layers),
                          static_cast<std::uint32_t>(cfg_.fusion == Fusion::Gated ? 1 : 0)})
    write_pod(os, d);
  write_pod(os, static_cast<std::uint32_t>(params_.size()));
  for (const NamedParam& p : params_) {
    write_pod(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_pod(os, static_cast<std::uint8_t>(p.is_norm ? 1 : 0));
    write_pod(os, static_cast<std::uint32_t>(p.param.value().rows()));
    write_pod(os, static_cast<std::uint32_t>(p.param.value().cols()));
    const Tensor& t = p.param.value();
    os.write(reinterpret_cast<const char*>(t.array().data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

MultimodalClassifier MultimodalClassifier::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  std::uint64_t off = 0;

  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw ParseError("checkpoint: bad magic", 0);
  off += sizeof(magic);

  const auto version = read_pod<std::uint32_t>(is, off, "version");
  if (version != kCkptVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version), off - 4);

  ModelConfig cfg;
  cfg.audio_dim = read_pod<std::uint32_t>(is, off, "audio_dim");
  cfg.video_dim = read_pod<std::uint32_t>(is, off, "video_dim");
  cfg.hidden_dim = read_pod<std::uint32_t>(is, off, "hidden_dim");
  cfg.num_classes = read_pod<std::uint32_t>(is, off, "num_classes");
  cfg.encoder_layers = read_pod<std::uint32_t>(is, off, "encoder_layers");
  cfg.fusion = read_pod<std::uint32_t>(is, off, "fusion") ? Fusion::Gated : Fusion::Concat;

  MultimodalClassifier m = init(cfg, 0);
  const auto count = read_pod<std::uint32_t>(is, off, "param count");
  if (count != m.params_.size())
    throw ParseError("checkpoint: parameter count " + std::to_string(count) + " != expected " +
                         std::to_string(m.params_.size()),
                     off - 4);
  for (NamedParam& p : m.params_) {
    const auto name_len = read_pod<std::uint32_t>(is, off, "name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ParseError("checkpoint: truncated reading name", off);
    off += name_len;
    if (name != p.name)
      throw ParseError("checkpoint: parameter '" + name + "' where '" + p.name + "' expected",
                       off - name_len);
    read_pod<std::uint8_t>(is, off, "is_norm");
    const auto rows = read_pod<std::uint32_t>(is, off, "rows");
    const auto cols = read_pod<std::uint32_t>(is, off, "cols");
    if (rows != p.param.value().rows() || cols != p.param.value().cols())
      throw ParseError("checkpoint: shape mismatch for " + name, off - 8);
    Tensor t(rows, cols);
    is.read(reinterpret_cast<char*>(t.array().data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
    if (!is) throw ParseError("checkpoint: truncated reading values of " + name, off);
    off += sizeof(double) * static_cast<std::size_t>(t.size());
    p.param.node()->value = t;
  }
  return m;
}

}  // namespace midl
