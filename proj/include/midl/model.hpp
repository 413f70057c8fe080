#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "midl/autodiff.hpp"

namespace midl {

// Which modality accompanies a revealed sample: audio only, video only, both.
enum class Modality { A, V, AV };

const char* to_string(Modality m);

enum class Fusion { Concat, Gated };
enum class ParameterSelection { NormLayersOnly, AllParameters };

struct ModelConfig {
  Index audio_dim = 16;
  Index video_dim = 16;
  Index hidden_dim = 32;
  Index num_classes = 8;
  Index encoder_layers = 2;
  Fusion fusion = Fusion::Concat;

  void validate() const;  // throws ConfigError
  bool operator==(const ModelConfig&) const = default;
};

struct NamedParam {
  std::string name;
  Value param;
  bool is_norm;  // learnable normalization scale/shift
};

// Forward/backward counts; MiDl's adaptation cost accounting reads these.
struct ComputeCounters {
  std::uint64_t forwards_live = 0;
  std::uint64_t forwards_frozen = 0;
  std::uint64_t backwards = 0;
};

// affine: x[B,din] * w[din,dout] + b[1,dout] broadcast over rows.
Value affine(const Value& x, const Value& w, const Value& b);

// Per-row standardization over the feature axis (mean 0, var 1, eps 1e-5),
// then learnable per-feature gain/shift. Batch-independent, so well defined
// at batch size 1.
Value layer_norm(const Value& x, const Value& gain, const Value& shift, double eps = 1e-5);

// Two-branch multimodal classifier: per-modality MLP encoders
// (affine -> layer_norm -> relu, repeated), a fusion block, and a linear
// head with a softmax output. A missing modality is zero-filled on the raw
// input before encoding, keeping the input dimensionality fixed.
class MultimodalClassifier {
 public:
  MultimodalClassifier() = default;

  // Fresh model; affine weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
  // norm gain 1, norm shift 0.
  static MultimodalClassifier init(const ModelConfig& cfg, std::uint64_t seed);

  // audio [B, audio_dim], video [B, video_dim] -> probabilities [B, K].
  // Builds a gradient graph on top of this model's parameter leaves.
  Value forward(const Tensor& audio, const Tensor& video, Modality m) const;
  Tensor forward_probs(const Tensor& audio, const Tensor& video, Modality m) const;

  const ModelConfig& config() const { return cfg_; }
  const std::vector<NamedParam>& named_parameters() const { return params_; }
  std::vector<Value> select_parameters(ParameterSelection sel) const;
  Index norm_layer_count() const { return 2 * cfg_.encoder_layers; }
  std::size_t parameter_scalars() const;

  // Deep copy; updates to either model never affect the other.
  MultimodalClassifier clone() const;

  void zero_grad();

  // Versioned binary checkpoint, bit-exact round trip (little-endian doubles).
  void save(const std::string& path) const;
  static MultimodalClassifier load(const std::string& path);

 private:
  struct Layer {
    Value w, b, gain, shift;
  };

  ModelConfig cfg_;
  std::vector<Layer> audio_enc_, video_enc_;
  Value fuse_w_, fuse_b_;  // concat fusion
  Value gate_w_, gate_b_;  // gated fusion
  Value head_w_, head_b_;
  std::vector<NamedParam> params_;

  Value encode(const Value& x, const std::vector<Layer>& enc) const;
  void register_params();
};

}  // namespace midl
