// Experiment driver: pretrain a multimodal checkpoint on synthetic data,
// run a single online-adaptation protocol, or sweep the full
// (method x missing-rate x seed) grid.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include <nlohmann/json.hpp>

#include "midl/experiment.hpp"

namespace fs = std::filesystem;
using midl::ConfigError;
using midl::ExperimentConfig;
using midl::Json;

namespace {

struct Overrides {
  std::vector<std::pair<std::string, std::string>> dotted;  // section.key -> raw value
  std::optional<std::string> method, warmup, kl_mode, params, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> missing_rate;
  std::optional<int> threads;
  bool mixed = false;
  std::string config_path;
  std::string checkpoint;
};

Json parse_typed(const Json& like, const std::string& raw, const std::string& key) {
  using value_t = Json::value_t;
  switch (like.type()) {
    case value_t::boolean:
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw ConfigError("flag --" + key + ": expected a boolean, got '" + raw + "'");
    case value_t::number_integer:
    case value_t::number_unsigned:
      return std::stoll(raw);
    case value_t::number_float:
      return std::stod(raw);
    case value_t::string:
      return raw;
    case value_t::array: {
      Json arr = Json::array();
      const Json elem_like = like.empty() ? Json("") : like.at(0);
      std::size_t start = 0;
      while (start <= raw.size()) {
        const std::size_t comma = raw.find(',', start);
        const std::string piece =
            raw.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!piece.empty()) arr.push_back(parse_typed(elem_like, piece, key));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      if (arr.empty()) throw ConfigError("flag --" + key + ": empty list");
      return arr;
    }
    default:
      throw ConfigError("flag --" + key + ": unsupported field type");
  }
}

// Register a --section.key flag for every leaf of the default config.
void add_dotted_flags(CLI::App* cmd, Overrides& ov) {
  const Json defaults = midl::config_to_json(ExperimentConfig{});
  for (const auto& [section, body] : defaults.items()) {
    if (!body.is_object()) continue;
    for (const auto& [key, value] : body.items()) {
      const std::string dotted = section + "." + key;
      cmd->add_option_function<std::string>(
          "--" + dotted,
          [&ov, dotted](const std::string& raw) { ov.dotted.emplace_back(dotted, raw); },
          "override config field " + dotted);
    }
  }
}

void add_common_flags(CLI::App* cmd, Overrides& ov) {
  cmd->add_option("--config", ov.config_path, "JSON config file");
  cmd->add_option("--seed", ov.seed, "stream seed (and single-element sweep seed list)");
  cmd->add_option("--missing-rate", ov.missing_rate, "missing rate in [0,1]");
  cmd->add_option("--method", ov.method, "none|midl|mi_only|dl_only|tent|shot|eta");
  cmd->add_flag("--mixed", ov.mixed, "split the incomplete mass over both modalities");
  cmd->add_option("--warmup", ov.warmup, "none|lta|shifted");
  cmd->add_option("--kl-mode", ov.kl_mode, "av|per-modality");
  cmd->add_option("--params", ov.params, "norm|all");
  cmd->add_option("--out", ov.out, "output directory");
  cmd->add_option("--threads", ov.threads, "sweep worker pool size (0 = all cores)");
  add_dotted_flags(cmd, ov);
}

ExperimentConfig resolve_config(const Overrides& ov) {
  Json j = midl::config_to_json(ExperimentConfig{});
  if (!ov.config_path.empty())
    j = midl::config_to_json(midl::load_config(ov.config_path));

  for (const auto& [dotted, raw] : ov.dotted) {
    const auto dot = dotted.find('.');
    const std::string section = dotted.substr(0, dot);
    const std::string key = dotted.substr(dot + 1);
    j[section][key] = parse_typed(j[section][key], raw, dotted);
  }

  ExperimentConfig cfg = midl::config_from_json(j);
  if (ov.seed) {
    cfg.schedule.seed = *ov.seed;
    cfg.sweep.seeds = {*ov.seed};
  }
  if (ov.missing_rate) {
    cfg.schedule.missing_rate = *ov.missing_rate;
    cfg.sweep.missing_rates = {*ov.missing_rate};
  }
  if (ov.method) {
    cfg.adapter.method = midl::parse_method(*ov.method);
    cfg.sweep.methods = {cfg.adapter.method};
  }
  if (ov.mixed) cfg.schedule.mixed = true;
  if (ov.warmup) cfg.warmup.mode = midl::parse_warmup_mode(*ov.warmup);
  if (ov.kl_mode) cfg.adapter.kl_mode = midl::parse_kl_mode(*ov.kl_mode);
  if (ov.params) cfg.adapter.param_selection = midl::parse_selection(*ov.params);
  if (ov.out) cfg.out_dir = *ov.out;
  if (ov.threads) cfg.threads = *ov.threads;
  cfg.validate();
  return cfg;
}

midl::SplitDataset shifted_or_throw(const ExperimentConfig& cfg) {
  midl::SyntheticSpec spec = cfg.data.spec;
  if (!spec.domain_shift) spec.domain_shift = midl::DomainShift{};
  return midl::generate_shifted(spec, cfg.data.seed);
}

int cmd_pretrain(const Overrides& ov) {
  ExperimentConfig cfg = resolve_config(ov);
  fs::create_directories(cfg.out_dir);
  midl::SplitDataset data = midl::prepare_data(cfg.data);
  if (data.train.audio_dim() != cfg.model.audio_dim ||
      data.train.video_dim() != cfg.model.video_dim ||
      data.train.num_classes != cfg.model.num_classes)
    throw ConfigError("pretrain: model dims/classes do not match the dataset");

  Json log;
  const struct {
    const char* name;
    midl::Modality forced;
  } jobs[] = {{"multimodal", midl::Modality::AV},
              {"unimodal_audio", midl::Modality::A},
              {"unimodal_video", midl::Modality::V}};
  for (const auto& job : jobs) {
    midl::PretrainResult res =
        midl::pretrain(cfg.model, data.train, data.val, cfg.pretrain, cfg.data.seed, job.forced);
    const std::string path = cfg.out_dir + "/" + job.name + ".ckpt";
    res.model.save(path);
    log[job.name] = {{"checkpoint", path},
                     {"train_accuracy", res.train_accuracy},
                     {"val_accuracy", res.val_accuracy},
                     {"final_loss", res.final_loss}};
    std::cout << job.name << ": train acc " << res.train_accuracy << ", val acc "
              << res.val_accuracy << " -> " << path << "\n";
  }
  log["config"] = midl::config_to_json(cfg);
  std::ofstream os(cfg.out_dir + "/pretrain_log.json");
  os << log.dump(2) << "\n";
  return 0;
}

int cmd_run(const Overrides& ov) {
  ExperimentConfig cfg = resolve_config(ov);
  fs::create_directories(cfg.out_dir);
  midl::SplitDataset data = midl::prepare_data(cfg.data);

  const std::string ckpt =
      ov.checkpoint.empty() ? cfg.out_dir + "/multimodal.ckpt" : ov.checkpoint;
  midl::MultimodalClassifier model = midl::MultimodalClassifier::load(ckpt);
  if (model.config().audio_dim != data.train.audio_dim() ||
      model.config().video_dim != data.train.video_dim() ||
      model.config().num_classes != data.train.num_classes)
    throw ConfigError("run: checkpoint dims/classes do not match the dataset");

  std::optional<midl::SplitDataset> shifted;
  if (cfg.warmup.mode == midl::WarmupMode::Shifted) shifted = shifted_or_throw(cfg);

  midl::RunOutcome out =
      midl::run_single(model, cfg, cfg.adapter.method, cfg.schedule.missing_rate,
                       cfg.schedule.seed, data, shifted ? &*shifted : nullptr);

  midl::write_trace_csv(cfg.out_dir + "/trace.csv", out.metrics);
  midl::write_summary_json(cfg.out_dir + "/summary.json", cfg, {out});
  std::cout << "method " << midl::to_string(out.method) << " @ missing rate " << out.missing_rate
            << ": accuracy " << out.accuracy << " (" << out.adapted_steps << "/" << out.steps
            << " adapted steps)\n";
  return 0;
}

int cmd_sweep(const Overrides& ov) {
  ExperimentConfig cfg = resolve_config(ov);
  fs::create_directories(cfg.out_dir);
  midl::SplitDataset data = midl::prepare_data(cfg.data);

  const std::string ckpt =
      ov.checkpoint.empty() ? cfg.out_dir + "/multimodal.ckpt" : ov.checkpoint;
  midl::MultimodalClassifier model = midl::MultimodalClassifier::load(ckpt);
  if (model.config().audio_dim != data.train.audio_dim() ||
      model.config().video_dim != data.train.video_dim() ||
      model.config().num_classes != data.train.num_classes)
    throw ConfigError("sweep: checkpoint dims/classes do not match the dataset");

  std::optional<midl::SplitDataset> shifted;
  if (cfg.warmup.mode == midl::WarmupMode::Shifted) shifted = shifted_or_throw(cfg);

  midl::ResultTable table = midl::run_sweep(model, cfg, data, shifted ? &*shifted : nullptr);

  midl::write_table_csv(cfg.out_dir + "/table.csv", table);
  midl::write_curves_csv(cfg.out_dir + "/curves.csv", table);
  std::vector<midl::RunOutcome> outcomes;
  for (const midl::SweepCell& c : table.cells)
    if (!c.failed) outcomes.push_back(c.outcome);
  midl::write_summary_json(cfg.out_dir + "/summary.json", cfg, outcomes);

  int failures = 0;
  for (const midl::SweepCell& c : table.cells)
    if (c.failed) {
      failures++;
      std::cerr << "cell (" << midl::to_string(c.outcome.method) << ", " << c.outcome.missing_rate
                << ", " << c.outcome.seed << ") failed: " << c.error << "\n";
    }
  std::cout << "sweep: " << table.cells.size() - failures << "/" << table.cells.size()
            << " cells ok -> " << cfg.out_dir << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online test-time adaptation for missing modalities"};
  app.require_subcommand(1);

  Overrides ov_pre, ov_run, ov_sweep;
  CLI::App* pre = app.add_subcommand("pretrain", "train and save the checkpoints");
  add_common_flags(pre, ov_pre);
  CLI::App* run = app.add_subcommand("run", "one online protocol run");
  add_common_flags(run, ov_run);
  run->add_option("--checkpoint", ov_run.checkpoint, "model checkpoint (default <out>/multimodal.ckpt)");
  CLI::App* sweep = app.add_subcommand("sweep", "full (method x rate x seed) grid");
  add_common_flags(sweep, ov_sweep);
  sweep->add_option("--checkpoint", ov_sweep.checkpoint, "model checkpoint (default <out>/multimodal.ckpt)");

  try {
    app.parse(argc, argv);
    if (pre->parsed()) return cmd_pretrain(ov_pre);
    if (run->parsed()) return cmd_run(ov_run);
    if (sweep->parsed()) return cmd_sweep(ov_sweep);
    return 2;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
