#pragma once

#include <vector>

#include "midl/model.hpp"

namespace midl {

// A point on the probability simplex over K classes.
using ClassProbabilities = ArrayX;

bool is_simplex(const ClassProbabilities& p, double tol = 1e-9);

// Plain-number objectives over probability vectors. These are the reference
// route; the graph builders below must agree with them (tested both ways).

// Shannon entropy H(p) = -sum p log p, with 0 log 0 := 0. Range [0, log K].
double entropy(const ClassProbabilities& p);

// KL(p || q) >= 0 with q clamped at 1e-12; 0 iff p = q up to clamping.
double kl_divergence(const ClassProbabilities& p, const ClassProbabilities& q);

struct MiParts {
  double l_ent;  // mean over views of -H(view)
  double l_div;  // -H(mean of views)
  double l_mi;   // l_ent - l_div = H(mean) - mean H >= 0
};

// Mutual-information estimate between prediction and modality source from
// per-view predictions. A single view collapses the estimate to exactly 0.
// Throws std::invalid_argument on an empty list.
MiParts mi_loss(const std::vector<ClassProbabilities>& views);

// Entropy-minimization objective (minimized as-is).
double tent_loss(const ClassProbabilities& p);

// Information-maximization objective: mean_i H(p_i) - H(mean_i p_i).
// Identically 0 for a batch of one. Throws on an empty batch.
double shot_loss(const std::vector<ClassProbabilities>& batch);

// Sample weight for entropy minimization with data selection: 0 when
// H(p) >= e0 (sample excluded), exp(e0 - H(p)) otherwise.
double eta_weight(const ClassProbabilities& p, double e0);

// ----- graph builders (used inside adaptation steps) -----

// Mean over rows of H(row); p is [B,K], result [1,1].
Value entropy_node(const Value& p);
// Mean over rows of KL(p_row || q_row) against a constant target.
Value kl_node(const Value& p, const Tensor& q);

struct MiNodes {
  Value l_ent, l_div, l_mi;
};
MiNodes mi_node(const std::vector<Value>& views);

// Whether self-distillation anchors only the modality-complete prediction
// (the default) or each modality view against the frozen model's same view.
enum class KlMode { AvOnly, PerModality };

struct LossBreakdown {
  double l_ent = 0.0;
  double l_div = 0.0;
  double l_mi = 0.0;
  double l_kl = 0.0;
  double total = 0.0;
};

struct MidlGraph {
  Value total;
  LossBreakdown parts;
};

// Builds the adaptation objective lambda_mi * L_MI + lambda_kl * L_KL for one
// modality-complete batch: three live forward passes (m in {A, V, AV}) plus a
// frozen pass with no gradient. `av_view`, when given, is reused as the AV
// view so the caller's prediction pass is not repeated. Counters, when given,
// are bumped per forward pass. Throws std::logic_error if m != AV: the
// adapter must not request an update on a modality-incomplete revelation.
MidlGraph midl_loss_graph(const MultimodalClassifier& live, const MultimodalClassifier& frozen,
                          const Tensor& audio, const Tensor& video, Modality m, double lambda_mi,
                          double lambda_kl, KlMode kl_mode, const Value* av_view = nullptr,
                          ComputeCounters* counters = nullptr);

// Evaluation-only convenience: builds the graph and returns the breakdown.
LossBreakdown midl_loss(const MultimodalClassifier& live, const MultimodalClassifier& frozen,
                        const Tensor& audio, const Tensor& video, Modality m, double lambda_mi,
                        double lambda_kl, KlMode kl_mode = KlMode::AvOnly);

}  // namespace midl
