#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "midl/model.hpp"

namespace midl {

// One multimodal input: paired feature vectors plus the hidden label.
struct MultimodalSample {
  Tensor audio;  // [1, audio_dim]
  Tensor video;  // [1, video_dim]
  std::int32_t label;
};

struct Dataset {
  Index num_classes = 0;
  MatrixRM audio;  // [N, audio_dim], one row per sample
  MatrixRM video;  // [N, video_dim]
  std::vector<std::int32_t> labels;

  Index size() const { return audio.rows(); }
  Index audio_dim() const { return audio.cols(); }
  Index video_dim() const { return video.cols(); }

  MultimodalSample sample(Index i) const;
  Tensor audio_batch(std::span<const int> idx) const;
  Tensor video_batch(std::span<const int> idx) const;

  void validate() const;  // finite features, labels in range, non-empty
};

struct DomainShift {
  double offset_scale = 2.0;  // scale of the per-modality mean offset
  double noise_scale = 1.5;   // multiplier on the noise covariance
};

struct SyntheticSpec {
  Index num_classes = 8;
  Index audio_dim = 16;
  Index video_dim = 16;
  int samples_per_class = 625;        // 5000 total -> 4000 train / 1000 val
  double class_separation = 1.2;      // scale of the class latent centers
  double modality_correlation = 0.65; // in [0,1]: shared fraction of the noise
  double noise_sigma = 1.5;
  std::optional<DomainShift> domain_shift;

  void validate() const;
};

struct SplitDataset {
  Dataset train;
  Dataset val;
};

// Both modalities are linear views of one class latent plus correlation-mixed
// noise, so modality-invariant prediction is achievable by construction.
// Deterministic under (spec, seed); features are float32-quantized so the
// feature-file round trip is lossless. Split 80/20 by seeded permutation.
SplitDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Covariate-shifted cousin: same class structure and generator path, with a
// per-modality mean offset and rescaled noise. Requires spec.domain_shift.
SplitDataset generate_shifted(const SyntheticSpec& spec, std::uint64_t seed);

struct PretrainOptions {
  int epochs = 40;
  double learning_rate = 0.05;
  double momentum = 0.9;
  int batch_size = 32;
};

struct PretrainResult {
  MultimodalClassifier model;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double final_loss = 0.0;
};

// Cross-entropy SGD on inputs forced to modality `forced` (AV for the
// multimodal model; A or V train the unimodal reference models).
// Throws std::runtime_error if the loss stops being finite.
PretrainResult pretrain(const ModelConfig& cfg, const Dataset& train, const Dataset& val,
                        const PretrainOptions& opts, std::uint64_t seed,
                        Modality forced = Modality::AV);

double evaluate_accuracy(const MultimodalClassifier& model, const Dataset& data, Modality m);

// Versioned binary feature file: magic, version, K, dims, count, then per
// sample a 32-bit label and little-endian float32 features. Lossless for
// generated datasets (features are float32-quantized at generation).
void save_features(const std::string& path, const Dataset& data);
Dataset load_features(const std::string& path);

// 80/20 split by seeded permutation (for externally loaded feature files).
SplitDataset split_dataset(const Dataset& data, std::uint64_t seed);

}  // namespace midl
