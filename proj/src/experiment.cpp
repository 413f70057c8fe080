#include "midl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

#include <nlohmann/json.hpp>

#include "midl/common.hpp"
#include "midl/rng.hpp"

namespace midl {

namespace {

template <typename T, typename F>
void maybe(const Json& j, const char* key, T& out, F&& convert) {
  if (j.contains(key)) out = convert(j.at(key));
}

template <typename T>
void maybe(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

Method parse_method(const std::string& s) {
  if (s == "none") return Method::None;
  if (s == "midl") return Method::Midl;
  if (s == "mi_only") return Method::MiOnly;
  if (s == "dl_only") return Method::DlOnly;
  if (s == "tent") return Method::Tent;
  if (s == "shot") return Method::Shot;
  if (s == "eta") return Method::Eta;
  throw ConfigError("unknown method '" + s + "' (none|midl|mi_only|dl_only|tent|shot|eta)");
}

Fusion parse_fusion(const std::string& s) {
  if (s == "concat") return Fusion::Concat;
  if (s == "gated") return Fusion::Gated;
  throw ConfigError("unknown fusion '" + s + "' (concat|gated)");
}

ParameterSelection parse_selection(const std::string& s) {
  if (s == "norm") return ParameterSelection::NormLayersOnly;
  if (s == "all") return ParameterSelection::AllParameters;
  throw ConfigError("unknown parameter selection '" + s + "' (norm|all)");
}

KlMode parse_kl_mode(const std::string& s) {
  if (s == "av") return KlMode::AvOnly;
  if (s == "per-modality") return KlMode::PerModality;
  throw ConfigError("unknown kl mode '" + s + "' (av|per-modality)");
}

WarmupMode parse_warmup_mode(const std::string& s) {
  if (s == "none") return WarmupMode::None;
  if (s == "lta") return WarmupMode::Lta;
  if (s == "shifted") return WarmupMode::Shifted;
  throw ConfigError("unknown warmup mode '" + s + "' (none|lta|shifted)");
}

const char* to_string(Fusion f) { return f == Fusion::Gated ? "gated" : "concat"; }
const char* to_string(ParameterSelection s) {
  return s == ParameterSelection::AllParameters ? "all" : "norm";
}
const char* to_string(KlMode m) { return m == KlMode::PerModality ? "per-modality" : "av"; }
const char* to_string(WarmupMode m) {
  switch (m) {
    case WarmupMode::Lta: return "lta";
    case WarmupMode::Shifted: return "shifted";
    default: return "none";
  }
}

void ExperimentConfig::validate() const {
  model.validate();
  adapter.validate();
  if (data.feature_file.empty()) data.spec.validate();
  if (schedule.missing_rate < 0.0 || schedule.missing_rate > 1.0)
    throw ConfigError("schedule.missing_rate must be in [0, 1]");
  if (sweep.seeds.empty()) throw ConfigError("sweep.seeds must be non-empty");
  if (sweep.methods.empty()) throw ConfigError("sweep.methods must be non-empty");
  for (double r : sweep.missing_rates)
    if (r < 0.0 || r > 1.0)
      throw ConfigError("sweep.missing_rates: " + std::to_string(r) + " outside [0, 1]");
  if (out_dir.empty()) throw ConfigError("out_dir must be set");
}

Json config_to_json(const ExperimentConfig& cfg) {
  Json j;
  j["data"] = {{"num_classes", cfg.data.spec.num_classes},
               {"audio_dim", cfg.data.spec.audio_dim},
               {"video_dim", cfg.data.spec.video_dim},
               {"samples_per_class", cfg.data.spec.samples_per_class},
               {"class_separation", cfg.data.spec.class_separation},
               {"modality_correlation", cfg.data.spec.modality_correlation},
               {"noise_sigma", cfg.data.spec.noise_sigma},
               {"shift_offset_scale", cfg.data.spec.domain_shift ? cfg.data.spec.domain_shift->offset_scale : 2.0},
               {"shift_noise_scale", cfg.data.spec.domain_shift ? cfg.data.spec.domain_shift->noise_scale : 1.5},
               {"feature_file", cfg.data.feature_file},
               {"seed", cfg.data.seed}};
  j["model"] = {{"audio_dim", cfg.model.audio_dim},
                {"video_dim", cfg.model.video_dim},
                {"hidden_dim", cfg.model.hidden_dim},
                {"num_classes", cfg.model.num_classes},
                {"encoder_layers", cfg.model.encoder_layers},
                {"fusion", to_string(cfg.model.fusion)}};
  j["pretrain"] = {{"epochs", cfg.pretrain.epochs},
                   {"learning_rate", cfg.pretrain.learning_rate},
                   {"momentum", cfg.pretrain.momentum},
                   {"batch_size", cfg.pretrain.batch_size}};
  j["adapter"] = {{"method", to_string(cfg.adapter.method)},
                  {"learning_rate", cfg.adapter.learning_rate},
                  {"momentum", cfg.adapter.momentum},
                  {"lambda_mi", cfg.adapter.lambda_mi},
                  {"lambda_kl", cfg.adapter.lambda_kl},
                  {"params", to_string(cfg.adapter.param_selection)},
                  {"kl_mode", to_string(cfg.adapter.kl_mode)},
                  {"eta_threshold", cfg.adapter.eta_threshold},
                  {"baselines_skip_unimodal", cfg.adapter.baselines_skip_unimodal},
                  {"batch_size", cfg.adapter.batch_size}};
  j["schedule"] = {{"missing_rate", cfg.schedule.missing_rate},
                   {"mixed", cfg.schedule.mixed},
                   {"length", cfg.schedule.length},
                   {"seed", cfg.schedule.seed}};
  j["warmup"] = {{"mode", to_string(cfg.warmup.mode)},
                 {"length", cfg.warmup.length},
                 {"complete_only", cfg.warmup.complete_only}};
  Json methods = Json::array();
  for (Method m : cfg.sweep.methods) methods.push_back(to_string(m));
  j["sweep"] = {{"methods", methods},
                {"missing_rates", cfg.sweep.missing_rates},
                {"seeds", cfg.sweep.seeds}};
  j["out"] = cfg.out_dir;
  j["threads"] = cfg.threads;
  return j;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig cfg;
  if (j.contains("data")) {
    const Json& d = j.at("data");
    maybe(d, "num_classes", cfg.data.spec.num_classes);
    maybe(d, "audio_dim", cfg.data.spec.audio_dim);
    maybe(d, "video_dim", cfg.data.spec.video_dim);
    maybe(d, "samples_per_class", cfg.data.spec.samples_per_class);
    maybe(d, "class_separation", cfg.data.spec.class_separation);
    maybe(d, "modality_correlation", cfg.data.spec.modality_correlation);
    maybe(d, "noise_sigma", cfg.data.spec.noise_sigma);
    DomainShift shift;
    maybe(d, "shift_offset_scale", shift.offset_scale);
    maybe(d, "shift_noise_scale", shift.noise_scale);
    cfg.data.spec.domain_shift = shift;
    maybe(d, "feature_file", cfg.data.feature_file);
    maybe(d, "seed", cfg.data.seed);
  } else {
    cfg.data.spec.domain_shift = DomainShift{};
  }
  if (j.contains("model")) {
    const Json& m = j.at("model");
    maybe(m, "audio_dim", cfg.model.audio_dim);
    maybe(m, "video_dim", cfg.model.video_dim);
    maybe(m, "hidden_dim", cfg.model.hidden_dim);
    maybe(m, "num_classes", cfg.model.num_classes);
    maybe(m, "encoder_layers", cfg.model.encoder_layers);
    maybe(m, "fusion", cfg.model.fusion,
          [](const Json& v) { return parse_fusion(v.get<std::string>()); });
  }
  if (j.contains("pretrain")) {
    const Json& p = j.at("pretrain");
    maybe(p, "epochs", cfg.pretrain.epochs);
    maybe(p, "learning_rate", cfg.pretrain.learning_rate);
    maybe(p, "momentum", cfg.pretrain.momentum);
    maybe(p, "batch_size", cfg.pretrain.batch_size);
  }
  if (j.contains("adapter")) {
    const Json& a = j.at("adapter");
    maybe(a, "method", cfg.adapter.method,
          [](const Json& v) { return parse_method(v.get<std::string>()); });
    maybe(a, "learning_rate", cfg.adapter.learning_rate);
    maybe(a, "momentum", cfg.adapter.momentum);
    maybe(a, "lambda_mi", cfg.adapter.lambda_mi);
    maybe(a, "lambda_kl", cfg.adapter.lambda_kl);
    maybe(a, "params", cfg.adapter.param_selection,
          [](const Json& v) { return parse_selection(v.get<std::string>()); });
    maybe(a, "kl_mode", cfg.adapter.kl_mode,
          [](const Json& v) { return parse_kl_mode(v.get<std::string>()); });
    maybe(a, "eta_threshold", cfg.adapter.eta_threshold);
    maybe(a, "baselines_skip_unimodal", cfg.adapter.baselines_skip_unimodal);
    maybe(a, "batch_size", cfg.adapter.batch_size);
  }
  if (j.contains("schedule")) {
    const Json& s = j.at("schedule");
    maybe(s, "missing_rate", cfg.schedule.missing_rate);
    maybe(s, "mixed", cfg.schedule.mixed);
    maybe(s, "length", cfg.schedule.length);
    maybe(s, "seed", cfg.schedule.seed);
  }
  if (j.contains("warmup")) {
    const Json& w = j.at("warmup");
    maybe(w, "mode", cfg.warmup.mode,
          [](const Json& v) { return parse_warmup_mode(v.get<std::string>()); });
    maybe(w, "length", cfg.warmup.length);
    maybe(w, "complete_only", cfg.warmup.complete_only);
  }
  if (j.contains("sweep")) {
    const Json& s = j.at("sweep");
    if (s.contains("methods")) {
      cfg.sweep.methods.clear();
      for (const Json& m : s.at("methods")) cfg.sweep.methods.push_back(parse_method(m.get<std::string>()));
    }
    maybe(s, "missing_rates", cfg.sweep.missing_rates);
    maybe(s, "seeds", cfg.sweep.seeds);
  }
  maybe(j, "out", cfg.out_dir);
  maybe(j, "threads", cfg.threads);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open: " + path);
  Json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

StreamSchedule make_schedule(double missing_rate, bool mixed, std::uint64_t seed, int length) {
  if (missing_rate < 0.0 || missing_rate > 1.0)
    throw ConfigError("missing_rate " + std::to_string(missing_rate) + " outside [0, 1]");
  StreamSchedule s;
  s.p_av = 1.0 - missing_rate;
  if (mixed) {
    s.p_a = 0.5 * missing_rate;
    s.p_v = 0.5 * missing_rate;
  } else {
    s.p_a = missing_rate;  // video dropped: audio-only revelations
    s.p_v = 0.0;
  }
  s.seed = seed;
  s.length = length;
  return s;
}

SplitDataset prepare_data(const DataConfig& data) {
  if (!data.feature_file.empty())
    return split_dataset(load_features(data.feature_file), data.seed);
  return generate_synthetic(data.spec, data.seed);
}

RunOutcome run_single(const MultimodalClassifier& pretrained, const ExperimentConfig& cfg,
                      Method method, double missing_rate, std::uint64_t seed,
                      const SplitDataset& data, const SplitDataset* shifted) {
  AdapterConfig acfg = cfg.adapter;
  acfg.method = method;
  Adapter adapter(pretrained, acfg);
  const int batch = adapter.config().batch_size;  // auto default resolved per method

  if (cfg.warmup.mode != WarmupMode::None) {
    const Dataset* warm_data = nullptr;
    if (cfg.warmup.mode == WarmupMode::Lta) {
      warm_data = &data.train;
    } else {
      if (!shifted) throw ConfigError("warmup.mode = shifted requires a shifted dataset");
      warm_data = &shifted->train;
    }
    const int max_len = static_cast<int>(warm_data->size()) / batch;
    const int warm_len = cfg.warmup.length > 0 ? std::min(cfg.warmup.length, max_len) : max_len;
    StreamSchedule warm = make_schedule(missing_rate, cfg.schedule.mixed,
                                        derive_seed(seed, kSeedWarmup), warm_len);
    run_stream(adapter, *warm_data, warm, Phase::Warmup, batch, cfg.warmup.complete_only);
  }

  const int max_len = static_cast<int>(data.val.size()) / batch;
  const int len = cfg.schedule.length > 0 ? std::min(cfg.schedule.length, max_len) : max_len;
  StreamSchedule eval = make_schedule(missing_rate, cfg.schedule.mixed, seed, len);

  RunOutcome out;
  out.method = method;
  out.missing_rate = missing_rate;
  out.seed = seed;
  out.metrics = run_stream(adapter, data.val, eval, Phase::Evaluate, batch);
  out.accuracy = out.metrics.accuracy();
  for (std::size_t i = 0; i < 3; ++i) {
    out.modality_accuracy[i] = out.metrics.modality_accuracy(static_cast<Modality>(i));
    out.modality_total[i] = out.metrics.total_by_m[i];
  }
  out.mean_losses = out.metrics.mean_losses();
  out.counters = adapter.counters();
  out.adapted_steps = out.metrics.adapted_steps;
  out.steps = out.metrics.steps;
  return out;
}

bool ResultTable::any_failed() const {
  return std::any_of(cells.begin(), cells.end(), [](const SweepCell& c) { return c.failed; });
}

ResultTable run_sweep(const MultimodalClassifier& pretrained, const ExperimentConfig& cfg,
                      const SplitDataset& data, const SplitDataset* shifted) {
  cfg.validate();
  ResultTable table;
  for (Method m : cfg.sweep.methods)
    for (double rate : cfg.sweep.missing_rates)
      for (std::uint64_t seed : cfg.sweep.seeds) {
        SweepCell cell;
        cell.outcome.method = m;
        cell.outcome.missing_rate = rate;
        cell.outcome.seed = seed;
        table.cells.push_back(std::move(cell));
      }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < table.cells.size();) {
      SweepCell& cell = table.cells[i];
      try {
        cell.outcome = run_single(pretrained, cfg, cell.outcome.method, cell.outcome.missing_rate,
                                  cell.outcome.seed, data, shifted);
        cell.outcome.metrics.trace.clear();  // per-sample rows are not aggregated
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
    }
  };

  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t n_threads =
      std::min<std::size_t>(cfg.threads > 0 ? static_cast<std::size_t>(cfg.threads) : hw,
                            table.cells.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  return table;
}

namespace {

Json outcome_to_json(const RunOutcome& o) {
  return Json{{"method", to_string(o.method)},
              {"missing_rate", o.missing_rate},
              {"seed", o.seed},
              {"accuracy", o.accuracy},
              {"accuracy_A", o.modality_accuracy[0]},
              {"accuracy_V", o.modality_accuracy[1]},
              {"accuracy_AV", o.modality_accuracy[2]},
              {"count_A", o.modality_total[0]},
              {"count_V", o.modality_total[1]},
              {"count_AV", o.modality_total[2]},
              {"steps", o.steps},
              {"adapted_steps", o.adapted_steps},
              {"mean_l_ent", o.mean_losses.l_ent},
              {"mean_l_div", o.mean_losses.l_div},
              {"mean_l_mi", o.mean_losses.l_mi},
              {"mean_l_kl", o.mean_losses.l_kl},
              {"mean_total", o.mean_losses.total},
              {"forwards_live", o.counters.forwards_live},
              {"forwards_frozen", o.counters.forwards_frozen},
              {"backwards", o.counters.backwards}};
}

}  // namespace

void write_summary_json(const std::string& path, const ExperimentConfig& cfg,
                        const std::vector<RunOutcome>& outcomes) {
  Json j;
  j["config"] = config_to_json(cfg);
  Json runs = Json::array();
  for (const RunOutcome& o : outcomes) runs.push_back(outcome_to_json(o));
  j["runs"] = runs;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("summary: cannot open for writing: " + path);
  os << j.dump(2) << "\n";
}

void write_curves_csv(const std::string& path, const ResultTable& table) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("curves: cannot open for writing: " + path);
  os << "method,missing_rate,seed,accuracy,accuracy_A,accuracy_V,accuracy_AV,adapted_steps,"
        "mean_l_ent,mean_l_div,mean_l_mi,mean_l_kl,forwards_live,forwards_frozen,backwards,"
        "failed\n";
  char buf[512];
  for (const SweepCell& c : table.cells) {
    const RunOutcome& o = c.outcome;
    std::snprintf(buf, sizeof(buf),
                  "%s,%g,%llu,%.10g,%.10g,%.10g,%.10g,%llu,%.10g,%.10g,%.10g,%.10g,%llu,%llu,%llu,%d\n",
                  to_string(o.method), o.missing_rate, static_cast<unsigned long long>(o.seed),
                  o.accuracy, o.modality_accuracy[0], o.modality_accuracy[1],
                  o.modality_accuracy[2], static_cast<unsigned long long>(o.adapted_steps),
                  o.mean_losses.l_ent, o.mean_losses.l_div, o.mean_losses.l_mi, o.mean_losses.l_kl,
                  static_cast<unsigned long long>(o.counters.forwards_live),
                  static_cast<unsigned long long>(o.counters.forwards_frozen),
                  static_cast<unsigned long long>(o.counters.backwards), c.failed ? 1 : 0);
    os << buf;
  }
}

void write_table_csv(const std::string& path, const ResultTable& table) {
  // Aggregate over seeds per (method, missing_rate).
  struct Agg {
    std::vector<double> accs;
    double acc_a = 0, acc_v = 0, acc_av = 0, l_mi = 0, l_kl = 0;
    std::uint64_t fwd_live = 0, fwd_frozen = 0, bwd = 0;
    int failed = 0;
  };
  std::map<std::pair<std::string, double>, Agg> groups;
  for (const SweepCell& c : table.cells) {
    Agg& g = groups[{to_string(c.outcome.method), c.outcome.missing_rate}];
    if (c.failed) {
      g.failed++;
      continue;
    }
    const RunOutcome& o = c.outcome;
    g.accs.push_back(o.accuracy);
    g.acc_a += o.modality_accuracy[0];
    g.acc_v += o.modality_accuracy[1];
    g.acc_av += o.modality_accuracy[2];
    g.l_mi += o.mean_losses.l_mi;
    g.l_kl += o.mean_losses.l_kl;
    g.fwd_live += o.counters.forwards_live;
    g.fwd_frozen += o.counters.forwards_frozen;
    g.bwd += o.counters.backwards;
  }
  std::ofstream os(path);
  if (!os) throw std::runtime_error("table: cannot open for writing: " + path);
  os << "method,missing_rate,seeds,accuracy_mean,accuracy_std,accuracy_A,accuracy_V,accuracy_AV,"
        "mean_l_mi,mean_l_kl,forwards_live,forwards_frozen,backwards,failed\n";
  char buf[512];
  for (const auto& [key, g] : groups) {
    const double n = static_cast<double>(g.accs.size());
    double mean = 0, sd = 0;
    if (n > 0) {
      for (double a : g.accs) mean += a;
      mean /= n;
      for (double a : g.accs) sd += (a - mean) * (a - mean);
      sd = n > 1 ? std::sqrt(sd / (n - 1)) : 0.0;
    }
    std::snprintf(buf, sizeof(buf), "%s,%g,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%llu,%llu,%llu,%d\n",
                  key.first.c_str(), key.second, g.accs.size(), mean, sd,
                  n ? g.acc_a / n : 0.0, n ? g.acc_v / n : 0.0, n ? g.acc_av / n : 0.0,
                  n ? g.l_mi / n : 0.0, n ? g.l_kl / n : 0.0,
                  static_cast<unsigned long long>(g.fwd_live),
                  static_cast<unsigned long long>(g.fwd_frozen),
                  static_cast<unsigned long long>(g.bwd), g.failed);
    os << buf;
  }
}

}  // namespace midl
