#include "midl/losses.hpp"

#include <stdexcept>

namespace midl {

bool is_simplex(const ClassProbabilities& p, double tol) {
  return p.size() >= 1 && (p >= 0.0).all() && std::abs(p.sum() - 1.0) <= tol;
}

double entropy(const ClassProbabilities& p) {
  return -(p * p.max(kLogEps).log()).sum();
}

double kl_divergence(const ClassProbabilities& p, const ClassProbabilities& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("kl_divergence: length mismatch " + std::to_string(p.size()) +
                                " vs " + std::to_string(q.size()));
  return (p * (p.max(kLogEps).log() - q.max(kLogEps).log())).sum();
}

MiParts mi_loss(const std::vector<ClassProbabilities>& views) {
  if (views.empty()) throw std::invalid_argument("mi_loss: no views given");
  const double n = static_cast<double>(views.size());
  ClassProbabilities mean = views[0];
  double ent_sum = -entropy(views[0]);
  for (std::size_t i = 1; i < views.size(); ++i) {
    if (views[i].size() != views[0].size())
      throw std::invalid_argument("mi_loss: views have differing lengths");
    mean += views[i];
    ent_sum += -entropy(views[i]);
  }
  mean /= n;
  MiParts parts;
  parts.l_ent = ent_sum / n;
  parts.l_div = -entropy(mean);
  parts.l_mi = parts.l_ent - parts.l_div;
  return parts;
}

double tent_loss(const ClassProbabilities& p) { return entropy(p); }

double shot_loss(const std::vector<ClassProbabilities>& batch) {
  if (batch.empty()) throw std::invalid_argument("shot_loss: empty batch");
  const double n = static_cast<double>(batch.size());
  ClassProbabilities mean = batch[0];
  double ent_sum = entropy(batch[0]);
  for (std::size_t i = 1; i < batch.size(); ++i) {
    mean += batch[i];
    ent_sum += entropy(batch[i]);
  }
  mean /= n;
  return ent_sum / n - entropy(mean);
}

double eta_weight(const ClassProbabilities& p, double e0) {
  if (e0 <= 0.0) throw std::invalid_argument("eta_weight: threshold must be > 0");
  const double h = entropy(p);
  if (h >= e0) return 0.0;
  return std::exp(e0 - h);
}

Value entropy_node(const Value& p) {
  const double batch = static_cast<double>(p.rows());
  return mul_scalar(negate(sum_all(mul(p, logc(p)))), 1.0 / batch);
}

Value kl_node(const Value& p, const Tensor& q) {
  if (!same_shape(p.value(), q))
    throw std::invalid_argument("kl_node: shape mismatch " + p.value().shape_str() + " vs " +
                                q.shape_str());
  const double batch = static_cast<double>(p.rows());
  Value qlog = constant([&] {
    Tensor t(q.rows(), q.cols());
    t.array() = q.array().max(kLogEps).log();
    return t;
  }());
  return mul_scalar(sum_all(mul(p, sub(logc(p), qlog))), 1.0 / batch);
}

MiNodes mi_node(const std::vector<Value>& views) {
  if (views.empty()) throw std::invalid_argument("mi_node: no views given");
  const double n = static_cast<double>(views.size());
  Value mean = views[0];
  Value ent_sum = negate(entropy_node(views[0]));
  for (std::size_t i = 1; i < views.size(); ++i) {
    mean = add(mean, views[i]);
    ent_sum = add(ent_sum, negate(entropy_node(views[i])));
  }
  mean = mul_scalar(mean, 1.0 / n);
  MiNodes nodes;
  nodes.l_ent = mul_scalar(ent_sum, 1.0 / n);
  nodes.l_div = negate(entropy_node(mean));
  nodes.l_mi = sub(nodes.l_ent, nodes.l_div);
  return nodes;
}

MidlGraph midl_loss_graph(const MultimodalClassifier& live, const MultimodalClassifier& frozen,
                          const Tensor& audio, const Tensor& video, Modality m, double lambda_mi,
                          double lambda_kl, KlMode kl_mode, const Value* av_view,
                          ComputeCounters* counters) {
  if (m != Modality::AV)
    throw std::logic_error("midl_loss: called on a modality-incomplete revelation");

  Value p_av = av_view ? *av_view : live.forward(audio, video, Modality::AV);
  if (!av_view && counters) counters->forwards_live++;
  Value p_a = live.forward(audio, video, Modality::A);
  Value p_v = live.forward(audio, video, Modality::V);
  if (counters) counters->forwards_live += 2;

  MiNodes mi = mi_node({p_a, p_v, p_av});

  // One frozen pass either way; the per-modality variant anchors every view
  // to the frozen modality-complete prediction.
  Value kl;
  Tensor q_av = frozen.forward_probs(audio, video, Modality::AV);
  if (counters) counters->forwards_frozen++;
  if (kl_mode == KlMode::AvOnly) {
    kl = kl_node(p_av, q_av);
  } else {
    kl = mul_scalar(add(add(kl_node(p_a, q_av), kl_node(p_v, q_av)), kl_node(p_av, q_av)),
                    1.0 / 3.0);
  }

  MidlGraph g;
  g.total = add(mul_scalar(mi.l_mi, lambda_mi), mul_scalar(kl, lambda_kl));
  g.parts.l_ent = mi.l_ent.value().item();
  g.parts.l_div = mi.l_div.value().item();
  g.parts.l_mi = mi.l_mi.value().item();
  g.parts.l_kl = kl.value().item();
  g.parts.total = g.total.value().item();
  return g;
}

LossBreakdown midl_loss(const MultimodalClassifier& live, const MultimodalClassifier& frozen,
                        const Tensor& audio, const Tensor& video, Modality m, double lambda_mi,
                        double lambda_kl, KlMode kl_mode) {
  return midl_loss_graph(live, frozen, audio, video, m, lambda_mi, lambda_kl, kl_mode).parts;
}

}  // namespace midl
