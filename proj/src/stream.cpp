#include "midl/stream.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "midl/common.hpp"
#include "midl/rng.hpp"

namespace midl {

void StreamSchedule::validate() const {
  auto check = [](const char* name, double p) {
    if (!(p >= 0.0 && p <= 1.0))
      throw ConfigError(std::string("schedule: ") + name + " = " + std::to_string(p) +
                        " outside [0, 1]");
  };
  check("p_a", p_a);
  check("p_v", p_v);
  check("p_av", p_av);
  if (std::abs(p_a + p_v + p_av - 1.0) > 1e-12)
    throw ConfigError("schedule: probabilities sum to " + std::to_string(p_a + p_v + p_av) +
                      ", expected 1");
  if (length < 1) throw ConfigError("schedule: length must be >= 1");
}

std::vector<Modality> build_schedule(const StreamSchedule& schedule) {
  schedule.validate();
  Rng rng(derive_seed(schedule.seed, kSeedSchedule));
  std::vector<Modality> out(static_cast<std::size_t>(schedule.length));
  for (Modality& m : out) {
    const double u = rng.next_double();
    m = u < schedule.p_a ? Modality::A
        : u < schedule.p_a + schedule.p_v ? Modality::V
                                          : Modality::AV;
  }
  return out;
}

int argmax_label(const ClassProbabilities& p) {
  Index best;
  p.maxCoeff(&best);  // Eigen keeps the first of equal maxima
  return static_cast<int>(best);
}

double OnlineMetrics::modality_accuracy(Modality m) const {
  const auto i = static_cast<std::size_t>(m);
  return total_by_m[i] ? static_cast<double>(correct_by_m[i]) / total_by_m[i] : 0.0;
}

LossBreakdown OnlineMetrics::mean_losses() const {
  LossBreakdown mean;
  if (adapted_steps == 0) return mean;
  const double n = static_cast<double>(adapted_steps);
  mean.l_ent = loss_sums.l_ent / n;
  mean.l_div = loss_sums.l_div / n;
  mean.l_mi = loss_sums.l_mi / n;
  mean.l_kl = loss_sums.l_kl / n;
  mean.total = loss_sums.total / n;
  return mean;
}

OnlineMetrics run_protocol(Adapter& adapter, const Dataset& data, std::span<const int> order,
                           std::span<const Modality> modalities, Phase phase, int batch_size) {
  if (batch_size < 1) throw ConfigError("protocol: batch_size must be >= 1");
  if (modalities.size() * static_cast<std::size_t>(batch_size) > order.size())
    throw ConfigError("protocol: stream needs " +
                      std::to_string(modalities.size() * static_cast<std::size_t>(batch_size)) +
                      " samples but only " + std::to_string(order.size()) + " are available");

  OnlineMetrics metrics;
  for (std::size_t t = 0; t < modalities.size(); ++t) {
    const std::span<const int> batch = order.subspan(t * batch_size, batch_size);
    const Modality m = modalities[t];

    Adapter::StepResult res = adapter.on_batch(data.audio_batch(batch), data.video_batch(batch), m);

    metrics.steps++;
    if (res.adapted) {
      metrics.adapted_steps++;
      metrics.loss_sums.l_ent += res.losses.l_ent;
      metrics.loss_sums.l_div += res.losses.l_div;
      metrics.loss_sums.l_mi += res.losses.l_mi;
      metrics.loss_sums.l_kl += res.losses.l_kl;
      metrics.loss_sums.total += res.losses.total;
    }
    if (phase == Phase::Warmup) continue;  // warm-up records no accuracy

    for (Index r = 0; r < res.probs.rows(); ++r) {
      const int predicted = argmax_label(res.probs.row_array(r));
      const std::int32_t label = data.labels[static_cast<std::size_t>(batch[static_cast<std::size_t>(r)])];
      const bool correct = predicted == label;
      metrics.total++;
      metrics.correct += correct;
      metrics.total_by_m[static_cast<std::size_t>(m)]++;
      metrics.correct_by_m[static_cast<std::size_t>(m)] += correct;
      metrics.trace.push_back({static_cast<std::int64_t>(t), m, predicted, label, correct,
                               res.losses, res.adapted});
    }
  }
  return metrics;
}

OnlineMetrics run_stream(Adapter& adapter, const Dataset& data, const StreamSchedule& schedule,
                         Phase phase, int batch_size, bool complete_only) {
  schedule.validate();
  Rng shuffle_rng(derive_seed(schedule.seed, kSeedShuffle));
  const std::vector<int> order = shuffled_indices(static_cast<int>(data.size()), shuffle_rng);
  const std::vector<Modality> ms =
      complete_only ? std::vector<Modality>(static_cast<std::size_t>(schedule.length), Modality::AV)
                    : build_schedule(schedule);
  return run_protocol(adapter, data, order, ms, phase, batch_size);
}

void write_trace_csv(const std::string& path, const OnlineMetrics& metrics) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("trace: cannot open for writing: " + path);
  os << "t,modality,predicted,label,correct,l_ent,l_div,l_mi,l_kl,adapted\n";
  char buf[256];
  for (const TraceRow& row : metrics.trace) {
    std::snprintf(buf, sizeof(buf), "%lld,%s,%d,%d,%d,%.17g,%.17g,%.17g,%.17g,%d\n",
                  static_cast<long long>(row.t), to_string(row.m), row.predicted, row.label,
                  row.correct ? 1 : 0, row.losses.l_ent, row.losses.l_div, row.losses.l_mi,
                  row.losses.l_kl, row.adapted ? 1 : 0);
    os << buf;
  }
  if (!os) throw std::runtime_error("trace: write failed: " + path);
}

}  // namespace midl
