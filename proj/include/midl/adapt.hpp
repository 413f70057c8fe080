#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "midl/losses.hpp"

namespace midl {

enum class Method { None, Midl, MiOnly, DlOnly, Tent, Shot, Eta };

const char* to_string(Method m);
bool is_midl_family(Method m);  // adapts only on modality-complete revelations

struct AdapterConfig {
  Method method = Method::None;
  double learning_rate = 25e-4;
  double momentum = 0.9;
  double lambda_mi = 3.0;
  double lambda_kl = 3.0;
  ParameterSelection param_selection = ParameterSelection::NormLayersOnly;
  KlMode kl_mode = KlMode::AvOnly;
  // <= 0 resolves to the conventional 0.4 * ln(num_classes).
  double eta_threshold = 0.0;
  // Tent/Shot/Eta adapt on every revelation by default; set to restrict them
  // to modality-complete ones like the MiDl family.
  bool baselines_skip_unimodal = false;
  // 0 = auto: 8 for shot (whose diversity term degenerates at batch size 1),
  // 1 for everything else.
  int batch_size = 0;

  int resolved_batch_size() const;
  void validate() const;  // throws ConfigError
};

// momentum-SGD: v <- momentum * v + grad; theta <- theta - lr * v.
// Gradients are read from the parameter nodes; callers must have zeroed and
// filled them with exactly one backward pass.
void sgd_step(std::span<const Value> params, std::span<Tensor> momentum_buffers,
              double learning_rate, double momentum);

// Online adaptation state: a live model theta_t, the frozen theta_0, momentum
// buffers for the selected parameters, and compute counters. Strictly
// sequential; one revelation at a time.
class Adapter {
 public:
  Adapter(const MultimodalClassifier& pretrained, const AdapterConfig& cfg);

  struct StepResult {
    Tensor probs;  // [B, K], computed with theta_t before any update
    bool adapted = false;
    LossBreakdown losses;  // zeros on non-adapted steps
  };

  // Predict-then-maybe-update on one revealed batch with modality m.
  StepResult on_batch(const Tensor& audio, const Tensor& video, Modality m);

  const MultimodalClassifier& live() const { return live_; }
  const MultimodalClassifier& frozen() const { return frozen_; }
  const AdapterConfig& config() const { return cfg_; }
  const ComputeCounters& counters() const { return counters_; }
  std::uint64_t step_count() const { return steps_; }
  double eta_threshold() const { return eta_threshold_; }

 private:
  AdapterConfig cfg_;
  MultimodalClassifier live_;
  MultimodalClassifier frozen_;
  std::vector<Value> selected_;
  std::vector<Tensor> momentum_;
  ComputeCounters counters_;
  std::uint64_t steps_ = 0;
  double eta_threshold_;

  void apply_update(const Value& total);
};

}  // namespace midl
