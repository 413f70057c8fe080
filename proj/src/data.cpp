#include "midl/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "midl/common.hpp"
#include "midl/losses.hpp"
#include "midl/rng.hpp"
#include "midl/stream.hpp"

namespace midl {

MultimodalSample Dataset::sample(Index i) const {
  MultimodalSample s;
  s.audio = Tensor::row(audio.row(i).array().transpose());
  s.video = Tensor::row(video.row(i).array().transpose());
  s.label = labels[static_cast<std::size_t>(i)];
  return s;
}

Tensor Dataset::audio_batch(std::span<const int> idx) const {
  Tensor t(static_cast<Index>(idx.size()), audio.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) t.mat().row(static_cast<Index>(r)) = audio.row(idx[r]);
  return t;
}

Tensor Dataset::video_batch(std::span<const int> idx) const {
  Tensor t(static_cast<Index>(idx.size()), video.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) t.mat().row(static_cast<Index>(r)) = video.row(idx[r]);
  return t;
}

void Dataset::validate() const {
  if (size() == 0) throw ConfigError("dataset: empty dataset");
  if (video.rows() != audio.rows() || static_cast<Index>(labels.size()) != audio.rows())
    throw ConfigError("dataset: audio/video/label counts disagree");
  if (!audio.array().isFinite().all() || !video.array().isFinite().all())
    throw ConfigError("dataset: non-finite feature values");
  for (std::int32_t y : labels)
    if (y < 0 || y >= num_classes)
      throw ConfigError("dataset: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
}

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
  if (audio_dim < 1 || video_dim < 1) throw ConfigError("synthetic: feature dims must be >= 1");
  if (samples_per_class < 2) throw ConfigError("synthetic: samples_per_class must be >= 2");
  if (class_separation <= 0.0) throw ConfigError("synthetic: class_separation must be > 0");
  if (noise_sigma <= 0.0) throw ConfigError("synthetic: noise_sigma must be > 0");
  if (modality_correlation < 0.0 || modality_correlation > 1.0)
    throw ConfigError("synthetic: modality_correlation must be in [0, 1]");
}

namespace {

// Quantize to float32 so feature files round-trip bit-exactly.
double q32(double x) { return static_cast<double>(static_cast<float>(x)); }

SplitDataset generate_impl(const SyntheticSpec& spec, std::uint64_t seed,
                           const DomainShift* shift) {
  spec.validate();
  const Index latent = spec.num_classes;  // pinned: latent width tracks the class count
  const Index n = static_cast<Index>(spec.samples_per_class) * spec.num_classes;

  Rng rng(derive_seed(seed, kSeedData));
  MatrixRM centers(spec.num_classes, latent);
  for (Index k = 0; k < spec.num_classes; ++k)
    for (Index j = 0; j < latent; ++j) centers(k, j) = spec.class_separation * rng.next_gaussian();

  const double proj_scale = 1.0 / std::sqrt(static_cast<double>(latent));
  MatrixRM a_proj(latent, spec.audio_dim), v_proj(latent, spec.video_dim);
  for (Index i = 0; i < latent; ++i) {
    for (Index j = 0; j < spec.audio_dim; ++j) a_proj(i, j) = proj_scale * rng.next_gaussian();
    for (Index j = 0; j < spec.video_dim; ++j) v_proj(i, j) = proj_scale * rng.next_gaussian();
  }

  // Shift parameters come from their own sub-stream so the main draws are
  // identical with and without a shift.
  Eigen::RowVectorXd offset_a = Eigen::RowVectorXd::Zero(spec.audio_dim);
  Eigen::RowVectorXd offset_v = Eigen::RowVectorXd::Zero(spec.video_dim);
  double sigma = spec.noise_sigma;
  if (shift) {
    Rng srng(derive_seed(seed, kSeedShift));
    for (Index j = 0; j < spec.audio_dim; ++j)
      offset_a(j) = shift->offset_scale * srng.next_gaussian();
    for (Index j = 0; j < spec.video_dim; ++j)
      offset_v(j) = shift->offset_scale * srng.next_gaussian();
    sigma = spec.noise_sigma * shift->noise_scale;
  }
  const double rho = spec.modality_correlation;
  const double shared_scale = sigma * std::sqrt(rho);
  const double private_scale = sigma * std::sqrt(1.0 - rho);

  Dataset all;
  all.num_classes = spec.num_classes;
  all.audio.resize(n, spec.audio_dim);
  all.video.resize(n, spec.video_dim);
  all.labels.resize(static_cast<std::size_t>(n));

  Eigen::RowVectorXd shared(latent), eps_a(spec.audio_dim), eps_v(spec.video_dim);
  Index i = 0;
  for (Index k = 0; k < spec.num_classes; ++k) {
    for (int s = 0; s < spec.samples_per_class; ++s, ++i) {
      for (Index j = 0; j < latent; ++j) shared(j) = rng.next_gaussian();
      for (Index j = 0; j < spec.audio_dim; ++j) eps_a(j) = rng.next_gaussian();
      for (Index j = 0; j < spec.video_dim; ++j) eps_v(j) = rng.next_gaussian();
      Eigen::RowVectorXd z = centers.row(k) + shared_scale * shared;
      all.audio.row(i) = (z * a_proj + private_scale * eps_a + offset_a)
                             .unaryExpr([](double x) { return q32(x); });
      all.video.row(i) = (z * v_proj + private_scale * eps_v + offset_v)
                             .unaryExpr([](double x) { return q32(x); });
      all.labels[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(k);
    }
  }
  return split_dataset(all, seed);
}

}  // namespace

SplitDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  return generate_impl(spec, seed, nullptr);
}

SplitDataset generate_shifted(const SyntheticSpec& spec, std::uint64_t seed) {
  if (!spec.domain_shift)
    throw ConfigError("generate_shifted: spec.domain_shift is not set");
  return generate_impl(spec, seed, &*spec.domain_shift);
}

SplitDataset split_dataset(const Dataset& data, std::uint64_t seed) {
  data.validate();
  const Index n = data.size();
  Rng rng(derive_seed(seed, kSeedSplit));
  std::vector<int> perm = shuffled_indices(static_cast<int>(n), rng);
  const Index n_train = (n * 8) / 10;

  auto take = [&](Index begin, Index end) {
    Dataset d;
    d.num_classes = data.num_classes;
    d.audio.resize(end - begin, data.audio_dim());
    d.video.resize(end - begin, data.video_dim());
    d.labels.resize(static_cast<std::size_t>(end - begin));
    for (Index r = begin; r < end; ++r) {
      const int src = perm[static_cast<std::size_t>(r)];
      d.audio.row(r - begin) = data.audio.row(src);
      d.video.row(r - begin) = data.video.row(src);
      d.labels[static_cast<std::size_t>(r - begin)] = data.labels[static_cast<std::size_t>(src)];
    }
    return d;
  };
  return {take(0, n_train), take(n_train, n)};
}

double evaluate_accuracy(const MultimodalClassifier& model, const Dataset& data, Modality m) {
  const int chunk = 256;
  std::uint64_t correct = 0;
  std::vector<int> idx;
  for (Index begin = 0; begin < data.size(); begin += chunk) {
    const Index end = std::min<Index>(begin + chunk, data.size());
    idx.clear();
    for (Index i = begin; i < end; ++i) idx.push_back(static_cast<int>(i));
    Tensor probs = model.forward_probs(data.audio_batch(idx), data.video_batch(idx), m);
    for (Index r = 0; r < probs.rows(); ++r)
      if (argmax_label(probs.row_array(r)) == data.labels[static_cast<std::size_t>(begin + r)])
        correct++;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

PretrainResult pretrain(const ModelConfig& cfg, const Dataset& train, const Dataset& val,
                        const PretrainOptions& opts, std::uint64_t seed, Modality forced) {
  cfg.validate();
  train.validate();
  if (train.audio_dim() != cfg.audio_dim || train.video_dim() != cfg.video_dim ||
      train.num_classes != cfg.num_classes)
    throw ConfigError("pretrain: dataset dims/classes do not match model config");
  if (opts.epochs < 0 || opts.batch_size < 1 || opts.learning_rate <= 0.0)
    throw ConfigError("pretrain: bad options");

  PretrainResult out;
  out.model = MultimodalClassifier::init(cfg, seed);
  std::vector<Value> params = out.model.select_parameters(ParameterSelection::AllParameters);
  std::vector<Tensor> momentum;
  for (const Value& p : params) momentum.push_back(Tensor::zeros(p.value().rows(), p.value().cols()));

  Rng order_rng(derive_seed(seed, kSeedPretrain));
  const int n = static_cast<int>(train.size());
  std::vector<int> batch_idx;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<int> perm = shuffled_indices(n, order_rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int begin = 0; begin < n; begin += opts.batch_size) {
      const int end = std::min(begin + opts.batch_size, n);
      batch_idx.assign(perm.begin() + begin, perm.begin() + end);
      const Index b = static_cast<Index>(batch_idx.size());

      Value probs = out.model.forward(train.audio_batch(batch_idx), train.video_batch(batch_idx),
                                      forced);
      Tensor onehot(b, cfg.num_classes);
      for (Index r = 0; r < b; ++r)
        onehot(r, train.labels[static_cast<std::size_t>(batch_idx[static_cast<std::size_t>(r)])]) =
            1.0;
      Value ce = mul_scalar(sum_all(mul(constant(onehot), logc(probs))),
                            -1.0 / static_cast<double>(b));
      epoch_loss += ce.value().item();
      batches++;

      out.model.zero_grad();
      backward(ce);
      sgd_step(params, momentum, opts.learning_rate, opts.momentum);
    }
    out.final_loss = epoch_loss / std::max(batches, 1);
    if (!std::isfinite(out.final_loss))
      throw std::runtime_error("pretrain: diverged (non-finite loss) at epoch " +
                               std::to_string(epoch));
  }

  out.train_accuracy = evaluate_accuracy(out.model, train, forced);
  out.val_accuracy = evaluate_accuracy(out.model, val, forced);
  return out;
}

namespace {

constexpr char kFeatMagic[4] = {'M', 'M', 'F', 'T'};
constexpr std::uint32_t kFeatVersion = 1;

template <typename T>
T read_le(std::ifstream& is, std::uint64_t& offset, const char* what) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ParseError(std::string("feature file: truncated reading ") + what, offset);
  offset += sizeof(T);
  return v;
}

}  // namespace

void save_features(const std::string& path, const Dataset& data) {
  data.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("feature file: cannot open for writing: " + path);
  os.write(kFeatMagic, sizeof(kFeatMagic));
  auto w32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  w32(kFeatVersion);
  w32(static_cast<std::uint32_t>(data.num_classes));
  w32(static_cast<std::uint32_t>(data.audio_dim()));
  w32(static_cast<std::uint32_t>(data.video_dim()));
  const std::uint64_t count = static_cast<std::uint64_t>(data.size());
  os.write(reinterpret_cast<const char*>(&count), 8);
  std::vector<float> buf;
  for (Index i = 0; i < data.size(); ++i) {
    const std::int32_t label = data.labels[static_cast<std::size_t>(i)];
    os.write(reinterpret_cast<const char*>(&label), 4);
    buf.clear();
    for (Index j = 0; j < data.audio_dim(); ++j) buf.push_back(static_cast<float>(data.audio(i, j)));
    for (Index j = 0; j < data.video_dim(); ++j) buf.push_back(static_cast<float>(data.video(i, j)));
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("feature file: write failed: " + path);
}

Dataset load_features(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("feature file: cannot open: " + path);
  std::uint64_t off = 0;

  char magic[4];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kFeatMagic, sizeof(magic)) != 0)
    throw ParseError("feature file: bad magic", 0);
  off += sizeof(magic);

  const auto version = read_le<std::uint32_t>(is, off, "version");
  if (version != kFeatVersion)
    throw ParseError("feature file: unsupported version " + std::to_string(version), off - 4);
  const auto num_classes = read_le<std::uint32_t>(is, off, "num_classes");
  const auto audio_dim = read_le<std::uint32_t>(is, off, "audio_dim");
  const auto video_dim = read_le<std::uint32_t>(is, off, "video_dim");
  const auto count = read_le<std::uint64_t>(is, off, "sample count");
  if (num_classes < 2) throw ParseError("feature file: num_classes must be >= 2", off - 20);
  if (audio_dim < 1 || video_dim < 1)
    throw ParseError("feature file: feature dims must be >= 1", off - 16);
  if (count == 0) throw ConfigError("feature file: empty dataset");

  Dataset d;
  d.num_classes = num_classes;
  d.audio.resize(static_cast<Index>(count), audio_dim);
  d.video.resize(static_cast<Index>(count), video_dim);
  d.labels.resize(count);
  std::vector<float> buf(audio_dim + video_dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto label = read_le<std::int32_t>(is, off, "label");
    if (label < 0 || static_cast<std::uint32_t>(label) >= num_classes)
      throw ParseError("feature file: label " + std::to_string(label) + " out of range", off - 4);
    d.labels[i] = label;
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw ParseError("feature file: truncated sample record", off);
    off += buf.size() * sizeof(float);
    for (std::uint32_t j = 0; j < audio_dim; ++j)
      d.audio(static_cast<Index>(i), j) = static_cast<double>(buf[j]);
    for (std::uint32_t j = 0; j < video_dim; ++j)
      d.video(static_cast<Index>(i), j) = static_cast<double>(buf[audio_dim + j]);
  }
  d.validate();
  return d;
}

}  // namespace midl
