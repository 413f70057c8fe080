#pragma once

#include <string>
#include <vector>

#include "midl/stream.hpp"

#include <nlohmann/json_fwd.hpp>

namespace midl {

using Json = nlohmann::json;

enum class WarmupMode { None, Lta, Shifted };

struct DataConfig {
  SyntheticSpec spec;
  std::string feature_file;  // when set, replaces synthetic generation
  std::uint64_t seed = 7;
};

struct ScheduleConfig {
  double missing_rate = 0.5;
  bool mixed = false;  // p_a = p_v = missing_rate / 2 instead of dropping video
  int length = 0;      // 0: as many revelations as the eval split supports
  std::uint64_t seed = 1;
};

struct WarmupConfig {
  WarmupMode mode = WarmupMode::None;
  int length = 0;  // 0: full warm-up split
  bool complete_only = true;
};

struct SweepConfig {
  std::vector<Method> methods = {Method::None,   Method::Midl, Method::MiOnly, Method::DlOnly,
                                 Method::Tent,   Method::Shot, Method::Eta};
  std::vector<double> missing_rates = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  PretrainOptions pretrain;
  AdapterConfig adapter;
  ScheduleConfig schedule;
  WarmupConfig warmup;
  SweepConfig sweep;
  std::string out_dir = "runs/out";
  int threads = 0;  // 0: hardware concurrency

  void validate() const;
};

// JSON round trip with every default materialized; parsing starts from the
// defaults and overrides only the keys present.
Json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const Json& j);
ExperimentConfig load_config(const std::string& path);

// String forms used by config files and CLI flags.
Method parse_method(const std::string& s);
Fusion parse_fusion(const std::string& s);
ParameterSelection parse_selection(const std::string& s);
KlMode parse_kl_mode(const std::string& s);
WarmupMode parse_warmup_mode(const std::string& s);
const char* to_string(Fusion f);
const char* to_string(ParameterSelection s);
const char* to_string(KlMode m);
const char* to_string(WarmupMode m);

// P from a missing rate: drop video by default ({r, 0, 1-r}); mixed splits
// the incomplete mass evenly ({r/2, r/2, 1-r}).
StreamSchedule make_schedule(double missing_rate, bool mixed, std::uint64_t seed, int length);

// Synthetic generation or feature-file ingestion per the config.
SplitDataset prepare_data(const DataConfig& data);

struct RunOutcome {
  Method method = Method::None;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  std::array<double, 3> modality_accuracy{};
  std::array<std::uint64_t, 3> modality_total{};
  LossBreakdown mean_losses;
  ComputeCounters counters;
  std::uint64_t adapted_steps = 0;
  std::uint64_t steps = 0;
  OnlineMetrics metrics;  // includes the full trace
};

// One protocol run: optional warm-up chain, then online evaluation on the
// validation split.
RunOutcome run_single(const MultimodalClassifier& pretrained, const ExperimentConfig& cfg,
                      Method method, double missing_rate, std::uint64_t seed,
                      const SplitDataset& data, const SplitDataset* shifted = nullptr);

struct SweepCell {
  RunOutcome outcome;
  bool failed = false;
  std::string error;
};

struct ResultTable {
  std::vector<SweepCell> cells;  // one per (method, rate, seed)
  bool any_failed() const;
};

// Full (method x missing-rate x seed) grid on a worker pool; cells are
// independent and failures are recorded per cell.
ResultTable run_sweep(const MultimodalClassifier& pretrained, const ExperimentConfig& cfg,
                      const SplitDataset& data, const SplitDataset* shifted = nullptr);

void write_summary_json(const std::string& path, const ExperimentConfig& cfg,
                        const std::vector<RunOutcome>& outcomes);
void write_curves_csv(const std::string& path, const ResultTable& table);
void write_table_csv(const std::string& path, const ResultTable& table);

}  // namespace midl
