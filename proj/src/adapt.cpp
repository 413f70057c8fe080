#include "midl/adapt.hpp"

#include <cmath>
#include <stdexcept>

#include "midl/common.hpp"

namespace midl {

const char* to_string(Method m) {
  switch (m) {
    case Method::None: return "none";
    case Method::Midl: return "midl";
    case Method::MiOnly: return "mi_only";
    case Method::DlOnly: return "dl_only";
    case Method::Tent: return "tent";
    case Method::Shot: return "shot";
    case Method::Eta: return "eta";
  }
  return "?";
}

bool is_midl_family(Method m) {
  return m == Method::Midl || m == Method::MiOnly || m == Method::DlOnly;
}

void AdapterConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("adapter: learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("adapter: momentum must be in [0, 1)");
  if (lambda_mi < 0.0 || lambda_kl < 0.0) throw ConfigError("adapter: lambdas must be >= 0");
  if (batch_size < 0) throw ConfigError("adapter: batch_size must be >= 1 (or 0 for auto)");
}

int AdapterConfig::resolved_batch_size() const {
  if (batch_size > 0) return batch_size;
  return method == Method::Shot ? 8 : 1;
}

void sgd_step(std::span<const Value> params, std::span<Tensor> momentum_buffers,
              double learning_rate, double momentum) {
  if (params.size() != momentum_buffers.size())
    throw std::logic_error("sgd_step: momentum buffer count does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Node& p = *params[i].node();
    Tensor& v = momentum_buffers[i];
    if (!same_shape(v, p.grad))
      throw std::logic_error("sgd_step: buffer shape " + v.shape_str() + " vs grad " +
                             p.grad.shape_str());
    v.array() = momentum * v.array() + p.grad.array();
    p.value.array() -= learning_rate * v.array();
  }
}

Adapter::Adapter(const MultimodalClassifier& pretrained, const AdapterConfig& cfg)
    : cfg_(cfg), live_(pretrained.clone()), frozen_(pretrained.clone()) {
  cfg_.validate();
  cfg_.batch_size = cfg_.resolved_batch_size();
  selected_ = live_.select_parameters(cfg_.param_selection);
  momentum_.reserve(selected_.size());
  for (const Value& p : selected_)
    momentum_.push_back(Tensor::zeros(p.value().rows(), p.value().cols()));
  eta_threshold_ = cfg_.eta_threshold > 0.0
                       ? cfg_.eta_threshold
                       : 0.4 * std::log(static_cast<double>(live_.config().num_classes));
}

void Adapter::apply_update(const Value& total) {
  live_.zero_grad();
  backward(total);
  counters_.backwards++;
  sgd_step(selected_, momentum_, cfg_.learning_rate, cfg_.momentum);
}

Adapter::StepResult Adapter::on_batch(const Tensor& audio, const Tensor& video, Modality m) {
  StepResult res;

  // Prediction with theta_t comes first; the update below reuses this pass.
  Value pred = live_.forward(audio, video, m);
  counters_.forwards_live++;
  res.probs = pred.value();

  const bool complete = (m == Modality::AV);
  bool want_update = false;
  switch (cfg_.method) {
    case Method::None: want_update = false; break;
    case Method::Midl:
    case Method::MiOnly:
    case Method::DlOnly: want_update = complete; break;
    case Method::Tent:
    case Method::Shot:
    case Method::Eta: want_update = complete || !cfg_.baselines_skip_unimodal; break;
  }
  if (!want_update) {
    steps_++;
    return res;
  }

  switch (cfg_.method) {
    case Method::Midl: {
      MidlGraph g = midl_loss_graph(live_, frozen_, audio, video, m, cfg_.lambda_mi,
                                    cfg_.lambda_kl, cfg_.kl_mode, &pred, &counters_);
      res.losses = g.parts;
      apply_update(g.total);
      res.adapted = true;
      break;
    }
    case Method::MiOnly: {
      Value p_a = live_.forward(audio, video, Modality::A);
      Value p_v = live_.forward(audio, video, Modality::V);
      counters_.forwards_live += 2;
      MiNodes mi = mi_node({p_a, p_v, pred});
      res.losses.l_ent = mi.l_ent.value().item();
      res.losses.l_div = mi.l_div.value().item();
      res.losses.l_mi = mi.l_mi.value().item();
      Value total = mul_scalar(mi.l_mi, cfg_.lambda_mi);
      res.losses.total = total.value().item();
      apply_update(total);
      res.adapted = true;
      break;
    }
    case Method::DlOnly: {
      Value kl;
      Tensor q_av = frozen_.forward_probs(audio, video, Modality::AV);
      counters_.forwards_frozen++;
      if (cfg_.kl_mode == KlMode::AvOnly) {
        kl = kl_node(pred, q_av);
      } else {
        Value p_a = live_.forward(audio, video, Modality::A);
        Value p_v = live_.forward(audio, video, Modality::V);
        counters_.forwards_live += 2;
        kl = mul_scalar(add(add(kl_node(p_a, q_av), kl_node(p_v, q_av)), kl_node(pred, q_av)),
                        1.0 / 3.0);
      }
      res.losses.l_kl = kl.value().item();
      Value total = mul_scalar(kl, cfg_.lambda_kl);
      res.losses.total = total.value().item();
      apply_update(total);
      res.adapted = true;
      break;
    }
    case Method::Tent: {
      Value total = entropy_node(pred);
      res.losses.l_ent = res.losses.total = total.value().item();
      apply_update(total);
      res.adapted = true;
      break;
    }
    case Method::Shot: {
      // Degenerates to an exact zero objective at batch size 1 (documented);
      // the diversity term needs more than one prediction.
      Value total = sub(entropy_node(pred), entropy_node(col_mean(pred)));
      res.losses.l_ent = entropy_node(pred).value().item();
      res.losses.total = total.value().item();
      apply_update(total);
      res.adapted = true;
      break;
    }
    case Method::Eta: {
      // Weights are detached: computed from the predicted probabilities as
      // constants, excluding high-entropy samples entirely.
      const Index batch = pred.rows();
      Tensor w(batch, 1);
      int selected_count = 0;
      for (Index r = 0; r < batch; ++r) {
        const double wr = eta_weight(res.probs.row_array(r), eta_threshold_);
        w(r, 0) = wr;
        if (wr > 0.0) selected_count++;
      }
      if (selected_count == 0) break;  // every sample excluded: no update
      Value row_ent = negate(row_sum(mul(pred, logc(pred))));
      Value total =
          mul_scalar(sum_all(mul(constant(w), row_ent)), 1.0 / static_cast<double>(selected_count));
      res.losses.l_ent = entropy_node(pred).value().item();
      res.losses.total = total.value().item();
      apply_update(total);
      res.adapted = true;
      break;
    }
    case Method::None: break;
  }
  steps_++;
  return res;
}

}  // namespace midl
