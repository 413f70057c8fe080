#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "midl/stream.hpp"

using namespace midl;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.audio_dim = 4;
  cfg.video_dim = 4;
  cfg.hidden_dim = 6;
  cfg.num_classes = 3;
  cfg.encoder_layers = 1;
  return cfg;
}

Dataset tiny_dataset(Index n, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = 3;
  spec.audio_dim = 4;
  spec.video_dim = 4;
  spec.samples_per_class = static_cast<int>(n) / 3 + 2;
  SplitDataset split = generate_synthetic(spec, seed);
  return split.train;
}

}  // namespace

TEST_CASE("schedule validation names the offending component") {
  StreamSchedule s{.p_a = -0.1, .p_v = 0.2, .p_av = 0.9, .seed = 1, .length = 10};
  try {
    s.validate();
    FAIL("expected validation error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("p_a") != std::string::npos);
  }
  StreamSchedule bad_sum{.p_a = 0.3, .p_v = 0.3, .p_av = 0.3, .seed = 1, .length = 10};
  CHECK_THROWS_AS(bad_sum.validate(), ConfigError);
  StreamSchedule bad_len{.p_a = 0.0, .p_v = 0.0, .p_av = 1.0, .seed = 1, .length = 0};
  CHECK_THROWS_AS(bad_len.validate(), ConfigError);
  CHECK(StreamSchedule{.p_a = 0.25, .p_v = 0.0, .p_av = 0.75}.missing_rate() ==
        doctest::Approx(0.25));
}

TEST_CASE("degenerate schedule is all AV") {
  StreamSchedule s{.p_a = 0.0, .p_v = 0.0, .p_av = 1.0, .seed = 9, .length = 500};
  for (Modality m : build_schedule(s)) CHECK(m == Modality::AV);
}

TEST_CASE("schedule frequencies concentrate around P") {
  StreamSchedule s{.p_a = 0.25, .p_v = 0.0, .p_av = 0.75, .seed = 123, .length = 100000};
  auto ms = build_schedule(s);
  double freq_a = 0, freq_v = 0;
  for (Modality m : ms) {
    freq_a += m == Modality::A;
    freq_v += m == Modality::V;
  }
  freq_a /= static_cast<double>(ms.size());
  freq_v /= static_cast<double>(ms.size());
  CHECK(freq_a >= 0.245);
  CHECK(freq_a <= 0.255);
  CHECK(freq_v == 0.0);

  // mixed schedule: p_a = p_v = 0.5 * (1 - p_av)
  StreamSchedule mixed{.p_a = 0.375, .p_v = 0.375, .p_av = 0.25, .seed = 123, .length = 100000};
  auto mm = build_schedule(mixed);
  double fa = 0, fv = 0;
  for (Modality m : mm) {
    fa += m == Modality::A;
    fv += m == Modality::V;
  }
  CHECK(std::abs(fa / 100000.0 - 0.375) <= 0.01);
  CHECK(std::abs(fv / 100000.0 - 0.375) <= 0.01);
}

TEST_CASE("identical schedule inputs give identical sequences; prefixes agree") {
  StreamSchedule s{.p_a = 0.3, .p_v = 0.2, .p_av = 0.5, .seed = 7, .length = 500};
  auto a = build_schedule(s);
  auto b = build_schedule(s);
  CHECK(a == b);

  StreamSchedule prefix = s;
  prefix.length = 250;
  auto p = build_schedule(prefix);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == a[i]);

  StreamSchedule other = s;
  other.seed = 8;
  CHECK(build_schedule(other) != a);
}

TEST_CASE("argmax tie-breaks to the lowest index") {
  ClassProbabilities p(3);
  p << 0.2, 0.5, 0.3;
  CHECK(argmax_label(p) == 1);
  ClassProbabilities tie(2);
  tie << 0.5, 0.5;
  CHECK(argmax_label(tie) == 0);

  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    ClassProbabilities v(6);
    for (Index j = 0; j < 6; ++j) v[j] = rng.next_double();
    // linear-scan oracle
    int best = 0;
    for (Index j = 1; j < 6; ++j)
      if (v[j] > v[best]) best = static_cast<int>(j);
    CHECK(argmax_label(v) == best);
  }
}

TEST_CASE("method none reproduces the frozen model's offline accuracy") {
  Dataset data = tiny_dataset(120, 5);
  auto model = MultimodalClassifier::init(tiny_config(), 6);
  Adapter adapter(model, AdapterConfig{});
  StreamSchedule s{.p_a = 0.4, .p_v = 0.1, .p_av = 0.5, .seed = 11, .length = 100};
  OnlineMetrics metrics = run_stream(adapter, data, s, Phase::Evaluate);

  // offline replay: same shuffle, same modality assignment, frozen model
  Rng shuffle_rng(derive_seed(s.seed, kSeedShuffle));
  auto order = shuffled_indices(static_cast<int>(data.size()), shuffle_rng);
  auto ms = build_schedule(s);
  std::uint64_t correct = 0;
  for (std::size_t t = 0; t < ms.size(); ++t) {
    const MultimodalSample sample = data.sample(order[t]);
    Tensor probs = model.forward_probs(sample.audio, sample.video, ms[t]);
    correct += argmax_label(probs.row_array(0)) == sample.label;
  }
  CHECK(metrics.correct == correct);
  CHECK(metrics.total == 100);
  CHECK(metrics.total_by_m[0] + metrics.total_by_m[1] + metrics.total_by_m[2] == metrics.total);
}

TEST_CASE("warm-up prefix plus evaluation equals the long stream's suffix") {
  Dataset data = tiny_dataset(200, 7);
  auto model = MultimodalClassifier::init(tiny_config(), 8);
  AdapterConfig cfg;
  cfg.method = Method::Midl;

  StreamSchedule s{.p_a = 0.25, .p_v = 0.25, .p_av = 0.5, .seed = 21, .length = 120};
  Rng shuffle_rng(derive_seed(s.seed, kSeedShuffle));
  auto order = shuffled_indices(static_cast<int>(data.size()), shuffle_rng);
  auto ms = build_schedule(s);

  Adapter long_run(model, cfg);
  OnlineMetrics full = run_protocol(long_run, data, order, ms, Phase::Evaluate);

  Adapter chained(model, cfg);
  std::span<const int> order_span(order);
  std::span<const Modality> ms_span(ms);
  OnlineMetrics warm =
      run_protocol(chained, data, order_span.subspan(0, 60), ms_span.subspan(0, 60), Phase::Warmup);
  CHECK(warm.total == 0);  // warm-up records no accuracy
  OnlineMetrics tail =
      run_protocol(chained, data, order_span.subspan(60), ms_span.subspan(60), Phase::Evaluate);

  REQUIRE(tail.trace.size() == 60);
  for (std::size_t i = 0; i < 60; ++i) {
    CHECK(tail.trace[i].predicted == full.trace[60 + i].predicted);
    CHECK(tail.trace[i].correct == full.trace[60 + i].correct);
  }
}

TEST_CASE("labels never influence the parameter trajectory") {
  Dataset data = tiny_dataset(150, 9);
  Dataset zeroed = data;
  std::fill(zeroed.labels.begin(), zeroed.labels.end(), 0);

  auto model = MultimodalClassifier::init(tiny_config(), 10);
  AdapterConfig cfg;
  cfg.method = Method::Midl;
  StreamSchedule s{.p_a = 0.3, .p_v = 0.0, .p_av = 0.7, .seed = 31, .length = 100};

  Adapter a(model, cfg), b(model, cfg);
  OnlineMetrics ma = run_stream(a, data, s, Phase::Evaluate);
  OnlineMetrics mb = run_stream(b, zeroed, s, Phase::Evaluate);

  REQUIRE(ma.trace.size() == mb.trace.size());
  for (std::size_t i = 0; i < ma.trace.size(); ++i)
    CHECK(ma.trace[i].predicted == mb.trace[i].predicted);  // only reported accuracy changes
  const auto& pa = a.live().named_parameters();
  const auto& pb = b.live().named_parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK(pa[i].param.value().same_bits(pb[i].param.value()));
}

TEST_CASE("complete-only warm-up forces AV on every revelation") {
  Dataset data = tiny_dataset(100, 12);
  auto model = MultimodalClassifier::init(tiny_config(), 13);
  AdapterConfig cfg;
  cfg.method = Method::Midl;
  Adapter adapter(model, cfg);
  StreamSchedule s{.p_a = 1.0, .p_v = 0.0, .p_av = 0.0, .seed = 41, .length = 50};
  OnlineMetrics metrics = run_stream(adapter, data, s, Phase::Warmup, 1, /*complete_only=*/true);
  CHECK(metrics.adapted_steps == 50);  // all revelations were modality-complete
  CHECK(adapter.counters().backwards == 50);
}

TEST_CASE("protocol rejects streams longer than the dataset") {
  Dataset data = tiny_dataset(60, 14);
  auto model = MultimodalClassifier::init(tiny_config(), 15);
  Adapter adapter(model, AdapterConfig{});
  StreamSchedule s{.p_a = 0.0, .p_v = 0.0, .p_av = 1.0, .seed = 1,
                   .length = static_cast<int>(data.size()) + 1};
  CHECK_THROWS_AS(run_stream(adapter, data, s, Phase::Evaluate), ConfigError);
}

TEST_CASE("trace csv has one row per evaluated sample") {
  Dataset data = tiny_dataset(80, 16);
  auto model = MultimodalClassifier::init(tiny_config(), 17);
  AdapterConfig cfg;
  cfg.method = Method::Tent;
  Adapter adapter(model, cfg);
  StreamSchedule s{.p_a = 0.5, .p_v = 0.0, .p_av = 0.5, .seed = 51, .length = 30};
  OnlineMetrics metrics = run_stream(adapter, data, s, Phase::Evaluate, 2);
  CHECK(metrics.total == 60);  // 30 revelations x batch 2

  const std::string path = "/tmp/midl_test_trace.csv";
  write_trace_csv(path, metrics);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "t,modality,predicted,label,correct,l_ent,l_div,l_mi,l_kl,adapted");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) rows++;
  CHECK(rows == 60);
  std::remove(path.c_str());
}
