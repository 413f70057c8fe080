#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "midl/adapt.hpp"
#include "midl/data.hpp"

namespace midl {

// Per-sample modality probabilities plus the seed that fixes both the
// modality sequence and the stream's sample order.
struct StreamSchedule {
  double p_a = 0.0;
  double p_v = 0.0;
  double p_av = 1.0;
  std::uint64_t seed = 1;
  int length = 1;  // number of revelations

  double missing_rate() const { return 1.0 - p_av; }
  void validate() const;  // throws ConfigError naming the offending component
};

// Independent per-position draws from {p_a, p_v, p_av} with the pinned
// generator; identical (P, seed, n) give identical sequences on any platform.
std::vector<Modality> build_schedule(const StreamSchedule& schedule);

// Lowest index among the maxima.
int argmax_label(const ClassProbabilities& p);

struct TraceRow {
  std::int64_t t;
  Modality m;
  int predicted;
  std::int32_t label;
  bool correct;
  LossBreakdown losses;
  bool adapted;
};

struct OnlineMetrics {
  std::uint64_t correct = 0;
  std::uint64_t total = 0;
  std::array<std::uint64_t, 3> correct_by_m{};  // indexed by Modality
  std::array<std::uint64_t, 3> total_by_m{};
  LossBreakdown loss_sums;  // summed over adapted revelations
  std::uint64_t adapted_steps = 0;
  std::uint64_t steps = 0;
  std::vector<TraceRow> trace;

  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
  double modality_accuracy(Modality m) const;
  LossBreakdown mean_losses() const;  // over adapted revelations
};

enum class Phase { Evaluate, Warmup };

// The online loop: reveal -> predict with theta_t -> maybe update. `order`
// gives the dataset positions consumed B at a time; `modalities` the per-
// revelation assignment. Warmup runs the identical loop but records no
// accuracy. Labels are never shown to the adapter in either phase.
OnlineMetrics run_protocol(Adapter& adapter, const Dataset& data, std::span<const int> order,
                           std::span<const Modality> modalities, Phase phase, int batch_size = 1);

// Shuffles the dataset once by the schedule seed and draws the modality
// sequence from the schedule; `complete_only` forces every revelation to AV
// (long-term-adaptation warm-up on modality-complete data).
OnlineMetrics run_stream(Adapter& adapter, const Dataset& data, const StreamSchedule& schedule,
                         Phase phase, int batch_size = 1, bool complete_only = false);

// One row per evaluated sample:
// t,modality,predicted,label,correct,l_ent,l_div,l_mi,l_kl,adapted
void write_trace_csv(const std::string& path, const OnlineMetrics& metrics);

}  // namespace midl
