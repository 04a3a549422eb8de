#include "gma/neural.hpp"

#include <algorithm>
#include <cstring>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <ostream>
#include <sstream>

#include <fmt/format.h>
#include <zlib.h>

#include "gma/binary_io.hpp"
#include "gma/errors.hpp"

namespace gma::nn {

void NetworkSpec::validate() const {
  if (frames < 1 || channels < 1) throw ConfigError("network input shape must be positive");
  if (filters < 1) throw ConfigError("filter count must be >= 1");
  if (filter_len < 1 || filter_len % 2 == 0) throw ConfigError("filter length must be odd");
  if (fc_sizes.empty() || fc_sizes.size() > 2) {
    throw ConfigError("one or two fully connected layers are supported");
  }
  for (int n : fc_sizes) {
    if (n < 1) throw ConfigError("fully connected layer sizes must be >= 1");
  }
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("dropout rate must lie in [0,1)");
  if (!(bn_momentum >= 0.0f && bn_momentum < 1.0f)) throw ConfigError("BN momentum must lie in [0,1)");
  if (!(bn_epsilon > 0.0f)) throw ConfigError("BN epsilon must be > 0");
}

std::string NetworkSpec::describe() const {
  std::string fc;
  for (size_t i = 0; i < fc_sizes.size(); ++i) fc += (i ? "," : "") + std::to_string(fc_sizes[i]);
  return fmt::format("in {}x{} conv {}x({}x1) fc ({})", frames, channels, filters, filter_len, fc);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning rate must be > 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam decay rates must lie in [0,1)");
  }
  if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be > 0");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2");
  if (!(validation_fraction > 0 && validation_fraction < 1)) {
    throw ConfigError("validation fraction must lie in (0,1)");
  }
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max epochs must be >= 1");
}

// ---------------------------------------------------------------------------
// Parameter containers

template <typename T>
std::vector<Tensor<T>*> Parameters<T>::trainable() {
  std::vector<Tensor<T>*> out{&conv_w, &conv_b, &conv_bn.gamma, &conv_bn.beta};
  for (size_t i = 0; i < fc_w.size(); ++i) {
    out.insert(out.end(), {&fc_w[i], &fc_b[i], &fc_bn[i].gamma, &fc_bn[i].beta});
  }
  out.insert(out.end(), {&out_w, &out_b});
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Parameters<T>::trainable() const {
  auto mut = const_cast<Parameters*>(this)->trainable();
  return {mut.begin(), mut.end()};
}

template <typename T>
std::vector<Tensor<T>*> Parameters<T>::all() {
  auto out = trainable();
  out.insert(out.end(), {&conv_bn.running_mean, &conv_bn.running_var});
  for (auto& bn : fc_bn) out.insert(out.end(), {&bn.running_mean, &bn.running_var});
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> Parameters<T>::all() const {
  auto mut = const_cast<Parameters*>(this)->all();
  return {mut.begin(), mut.end()};
}

template <typename T>
template <typename U>
Parameters<U> Parameters<T>::cast() const {
  Parameters<U> out;
  out.fc_w.resize(fc_w.size());
  out.fc_b.resize(fc_b.size());
  out.fc_bn.resize(fc_bn.size());
  auto src = all();
  auto dst = out.all();
  for (size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
  return out;
}

template <typename T>
Parameters<T> Parameters<T>::zeros_like() const {
  Parameters out = *this;
  for (auto* t : out.all()) t->setZero();
  return out;
}

namespace {

template <typename T>
BatchNorm<T> make_bn(int n) {
  return {Tensor<T>::Ones(1, n), Tensor<T>::Zero(1, n), Tensor<T>::Zero(1, n), Tensor<T>::Ones(1, n)};
}

ModelWeights shaped_weights(const NetworkSpec& spec) {
  spec.validate();
  ModelWeights w;
  w.conv_w = Tensor<float>::Zero(spec.filters, spec.filter_len * spec.channels);
  w.conv_b = Tensor<float>::Zero(1, spec.filters);
  w.conv_bn = make_bn<float>(spec.filters);
  int in = spec.flat_size();
  for (int out : spec.fc_sizes) {
    w.fc_w.push_back(Tensor<float>::Zero(out, in));
    w.fc_b.push_back(Tensor<float>::Zero(1, out));
    w.fc_bn.push_back(make_bn<float>(out));
    in = out;
  }
  w.out_w = Tensor<float>::Zero(1, in);
  w.out_b = Tensor<float>::Zero(1, 1);
  return w;
}

void glorot(Tensor<float>& t, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    t.data()[i] = static_cast<float>(rng.uniform(-limit, limit));
  }
}

}  // namespace

ModelWeights init_weights(const NetworkSpec& spec, Rng& rng) {
  ModelWeights w = shaped_weights(spec);
  glorot(w.conv_w, spec.filter_len * spec.channels, spec.filter_len * spec.filters, rng);
  for (auto& fc : w.fc_w) glorot(fc, static_cast<int>(fc.cols()), static_cast<int>(fc.rows()), rng);
  glorot(w.out_w, static_cast<int>(w.out_w.cols()), 1, rng);
  return w;
}

ModelWeights zero_weights(const NetworkSpec& spec) {
  ModelWeights w = shaped_weights(spec);
  w.conv_bn.gamma.setZero();
  for (auto& bn : w.fc_bn) bn.gamma.setZero();
  return w;
}

template <typename T>
void check_shapes(const Parameters<T>& w, const NetworkSpec& spec) {
  auto expect = [](const Tensor<T>& t, Eigen::Index r, Eigen::Index c, const char* name) {
    if (t.rows() != r || t.cols() != c) {
      throw ShapeMismatch(fmt::format("{} is {}x{}, expected {}x{}", name, t.rows(), t.cols(), r, c));
    }
  };
  auto expect_bn = [&](const BatchNorm<T>& bn, int n) {
    expect(bn.gamma, 1, n, "bn gamma");
    expect(bn.beta, 1, n, "bn beta");
    expect(bn.running_mean, 1, n, "bn running mean");
    expect(bn.running_var, 1, n, "bn running var");
  };
  expect(w.conv_w, spec.filters, spec.filter_len * spec.channels, "conv kernel");
  expect(w.conv_b, 1, spec.filters, "conv bias");
  expect_bn(w.conv_bn, spec.filters);
  if (w.fc_w.size() != spec.fc_sizes.size() || w.fc_b.size() != spec.fc_sizes.size() ||
      w.fc_bn.size() != spec.fc_sizes.size()) {
    throw ShapeMismatch("fully connected layer count differs from spec");
  }
  int in = spec.flat_size();
  for (size_t i = 0; i < spec.fc_sizes.size(); ++i) {
    expect(w.fc_w[i], spec.fc_sizes[i], in, "fc weight");
    expect(w.fc_b[i], 1, spec.fc_sizes[i], "fc bias");
    expect_bn(w.fc_bn[i], spec.fc_sizes[i]);
    in = spec.fc_sizes[i];
  }
  expect(w.out_w, 1, in, "output weight");
  expect(w.out_b, 1, 1, "output bias");
}

// ---------------------------------------------------------------------------
// Dropout

template <typename T>
DropoutMasks<T> sample_dropout(const NetworkSpec& spec, int batch, Rng& rng) {
  const T keep_scale = static_cast<T>(1.0 / (1.0 - spec.dropout));
  // Two 32-bit uniforms per engine draw.
  const auto cut = static_cast<std::uint64_t>(std::llround(static_cast<double>(spec.dropout) * 4294967296.0));
  auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
    Tensor<T> m(rows, cols);
    T* d = m.data();
    const Eigen::Index n = m.size();
    for (Eigen::Index i = 0; i < n; i += 2) {
      const std::uint64_t r = rng.next();
      d[i] = (r & 0xFFFFFFFFu) < cut ? T(0) : keep_scale;
      if (i + 1 < n) d[i + 1] = (r >> 32) < cut ? T(0) : keep_scale;
    }
    return m;
  };
  DropoutMasks<T> masks;
  masks.conv = draw(static_cast<Eigen::Index>(batch) * spec.frames, spec.filters);
  if (spec.fc_dropout()) {
    for (int n : spec.fc_sizes) masks.fc.push_back(draw(batch, n));
  } else {
    masks.fc.resize(spec.fc_sizes.size());
  }
  return masks;
}

template <typename T>
DropoutMasks<T> no_dropout(const NetworkSpec& spec, int batch) {
  DropoutMasks<T> masks;
  masks.conv = Tensor<T>::Ones(static_cast<Eigen::Index>(batch) * spec.frames, spec.filters);
  for (int n : spec.fc_sizes) masks.fc.push_back(Tensor<T>::Ones(batch, n));
  return masks;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// BN -> ReLU -> dropout on a pre-activation matrix (rows = samples).
template <typename T>
struct Stage {
  Tensor<T> xhat;
  RowVec<T> inv_std;
  Tensor<T> y;    // post-BN, pre-ReLU
  Tensor<T> out;  // post-ReLU, post-dropout
  const Tensor<T>* mask = nullptr;

  void forward(const Tensor<T>& z, const BatchNorm<T>& bn, Mode mode, T eps, const Tensor<T>* m,
               Eigen::VectorXd* stat_mean, Eigen::VectorXd* stat_var) {
    mask = (m && m->size() > 0) ? m : nullptr;
    RowVec<T> mean, var;
    if (mode == Mode::Train) {
      mean = z.colwise().mean();
      var = (z.rowwise() - mean).array().square().colwise().mean();
      if (stat_mean) *stat_mean = mean.transpose().template cast<double>();
      if (stat_var) *stat_var = var.transpose().template cast<double>();
    } else {
      mean = bn.running_mean.row(0);
      var = bn.running_var.row(0);
    }
    inv_std = (var.array() + eps).rsqrt().matrix();
    xhat = (z.rowwise() - mean) * inv_std.asDiagonal();
    y = xhat * bn.gamma.row(0).asDiagonal();
    y.rowwise() += bn.beta.row(0);
    out = y.cwiseMax(T(0));
    if (mask) out.array() *= mask->array();
  }

  /// Returns d loss / d z and accumulates BN parameter gradients.
  Tensor<T> backward(const Tensor<T>& d_out, const BatchNorm<T>& bn, BatchNorm<T>& g) const {
    Tensor<T> dy = d_out;
    if (mask) dy.array() *= mask->array();
    dy = (y.array() > T(0)).select(dy, T(0));
    g.gamma = (dy.array() * xhat.array()).colwise().sum().matrix();
    g.beta = dy.colwise().sum();
    const Tensor<T> dxhat = dy * bn.gamma.row(0).asDiagonal();
    const T n = static_cast<T>(dy.rows());
    const RowVec<T> sum_dxhat = dxhat.colwise().sum();
    const RowVec<T> sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum().matrix();
    Tensor<T> dz = (dxhat * n).rowwise() - sum_dxhat;
    dz -= xhat * sum_dxhat_xhat.asDiagonal();
    dz = dz * (inv_std / n).asDiagonal();
    return dz;
  }
};

template <typename T>
struct Cache {
  Tensor<T> patches;  // (batch * frames) x (filter_len * channels)
  Stage<T> conv;
  std::vector<Tensor<T>> fc_in;
  std::vector<Stage<T>> fc;
  std::vector<T> logits;
  std::vector<T> probs;
};

template <typename T>
Tensor<T> build_patches(const NetworkSpec& spec, std::span<const FeatureMatrix* const> batch) {
  const int frames = spec.frames;
  const int channels = spec.channels;
  const int half = spec.filter_len / 2;
  Tensor<T> patches = Tensor<T>::Zero(static_cast<Eigen::Index>(batch.size()) * frames,
                                      spec.filter_len * channels);
  for (size_t b = 0; b < batch.size(); ++b) {
    const FeatureMatrix& x = *batch[b];
    if (x.rows != frames || x.cols != channels) {
      throw ShapeMismatch(fmt::format("input is {}x{}, network expects {}x{}", x.rows, x.cols,
                                      frames, channels));
    }
    for (int t = 0; t < frames; ++t) {
      T* row = patches.row(static_cast<Eigen::Index>(b) * frames + t).data();
      for (int l = 0; l < spec.filter_len; ++l) {
        const int src = t + l - half;
        if (src < 0 || src >= frames) continue;
        const float* in = x.values.data() + static_cast<size_t>(src) * channels;
        std::copy(in, in + channels, row + static_cast<size_t>(l) * channels);
      }
    }
  }
  return patches;
}

template <typename T>
T sigmoid(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
Cache<T> run_forward(const Parameters<T>& w, const NetworkSpec& spec,
                     std::span<const FeatureMatrix* const> batch, Mode mode,
                     const DropoutMasks<T>* masks, BatchStats* stats) {
  if (batch.empty()) throw ShapeMismatch("empty batch");
  check_shapes(w, spec);
  const auto n = static_cast<Eigen::Index>(batch.size());
  const T eps = static_cast<T>(spec.bn_epsilon);
  const bool train = mode == Mode::Train;
  if (stats) {
    stats->mean.assign(1 + spec.fc_sizes.size(), {});
    stats->var.assign(1 + spec.fc_sizes.size(), {});
  }

  Cache<T> c;
  c.patches = build_patches<T>(spec, batch);
  Tensor<T> z;
  z.noalias() = c.patches * w.conv_w.transpose();
  z.rowwise() += w.conv_b.row(0);
  c.conv.forward(z, w.conv_bn, mode, eps, train && masks ? &masks->conv : nullptr,
                 stats ? &stats->mean[0] : nullptr, stats ? &stats->var[0] : nullptr);

  c.fc_in.push_back(Eigen::Map<const Tensor<T>>(c.conv.out.data(), n, spec.flat_size()));
  c.fc.resize(spec.fc_sizes.size());
  for (size_t i = 0; i < spec.fc_sizes.size(); ++i) {
    z.noalias() = c.fc_in[i] * w.fc_w[i].transpose();
    z.rowwise() += w.fc_b[i].row(0);
    const Tensor<T>* m = train && masks && i < masks->fc.size() ? &masks->fc[i] : nullptr;
    c.fc[i].forward(z, w.fc_bn[i], mode, eps, m, stats ? &stats->mean[i + 1] : nullptr,
                    stats ? &stats->var[i + 1] : nullptr);
    c.fc_in.push_back(c.fc[i].out);
  }

  const Tensor<T> logits = c.fc_in.back() * w.out_w.transpose();
  c.logits.resize(static_cast<size_t>(n));
  c.probs.resize(static_cast<size_t>(n));
  for (Eigen::Index b = 0; b < n; ++b) {
    c.logits[static_cast<size_t>(b)] = logits(b, 0) + w.out_b(0, 0);
    c.probs[static_cast<size_t>(b)] = sigmoid(c.logits[static_cast<size_t>(b)]);
  }
  return c;
}

}  // namespace

template <typename T>
BatchOutput<T> forward_batch(const Parameters<T>& w, const NetworkSpec& spec,
                             std::span<const FeatureMatrix* const> batch, Mode mode,
                             const DropoutMasks<T>* masks) {
  BatchOutput<T> out;
  auto cache = run_forward(w, spec, batch, mode, masks, mode == Mode::Train ? &out.stats : nullptr);
  out.probs = std::move(cache.probs);
  return out;
}

double forward(const ModelWeights& w, const NetworkSpec& spec, const FeatureMatrix& x, Mode mode,
               Rng* rng) {
  const FeatureMatrix* batch[] = {&x};
  if (mode == Mode::Train && rng) {
    const auto masks = sample_dropout<float>(spec, 1, *rng);
    return forward_batch(w, spec, batch, mode, &masks).probs[0];
  }
  return forward_batch(w, spec, batch, mode).probs[0];
}

double bce_loss(double p, double y) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

template <typename T>
GradientResult<T> gradients(const Parameters<T>& w, const NetworkSpec& spec,
                            std::span<const FeatureMatrix* const> batch, std::span<const int> labels,
                            const DropoutMasks<T>* masks) {
  if (labels.size() != batch.size()) throw ShapeMismatch("label count differs from batch size");
  GradientResult<T> r;
  Cache<T> c = run_forward(w, spec, batch, Mode::Train, masks, &r.output.stats);
  const auto n = static_cast<Eigen::Index>(batch.size());

  Tensor<T> d_logit(n, 1);
  double loss = 0;
  for (Eigen::Index b = 0; b < n; ++b) {
    const double p = static_cast<double>(c.probs[static_cast<size_t>(b)]);
    const double y = labels[static_cast<size_t>(b)];
    loss += bce_loss(p, y);
    const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
    d_logit(b, 0) = clamped ? T(0) : static_cast<T>((p - y) / static_cast<double>(n));
  }
  r.loss = static_cast<T>(loss / static_cast<double>(n));

  Parameters<T>& g = r.grads;
  g.fc_w.resize(w.fc_w.size());
  g.fc_b.resize(w.fc_b.size());
  g.fc_bn.resize(w.fc_bn.size());

  g.out_w = d_logit.transpose() * c.fc_in.back();
  g.out_b = Tensor<T>::Constant(1, 1, d_logit.sum());
  Tensor<T> d_act = d_logit * w.out_w;

  for (size_t i = spec.fc_sizes.size(); i-- > 0;) {
    const Tensor<T> dz = c.fc[i].backward(d_act, w.fc_bn[i], g.fc_bn[i]);
    g.fc_w[i].noalias() = dz.transpose() * c.fc_in[i];
    g.fc_b[i] = dz.colwise().sum();
    d_act.noalias() = dz * w.fc_w[i];
  }

  const Tensor<T> d_conv_out =
      Eigen::Map<const Tensor<T>>(d_act.data(), n * spec.frames, spec.filters);
  const Tensor<T> dz = c.conv.backward(d_conv_out, w.conv_bn, g.conv_bn);
  g.conv_w.noalias() = dz.transpose() * c.patches;
  g.conv_b = dz.colwise().sum();

  for (auto* bn : {&g.conv_bn}) {
    bn->running_mean = Tensor<T>::Zero(1, bn->gamma.cols());
    bn->running_var = Tensor<T>::Zero(1, bn->gamma.cols());
  }
  for (auto& bn : g.fc_bn) {
    bn.running_mean = Tensor<T>::Zero(1, bn.gamma.cols());
    bn.running_var = Tensor<T>::Zero(1, bn.gamma.cols());
  }
  r.output.probs = std::move(c.probs);
  return r;
}

// ---------------------------------------------------------------------------
// Optimiser and training

AdamState AdamState::for_weights(const ModelWeights& w) {
  return AdamState{w.zeros_like(), w.zeros_like(), 0};
}

void adam_step(ModelWeights& w, AdamState& state, const ModelWeights& grads,
               const TrainConfig& config) {
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  const float lr = static_cast<float>(config.learning_rate);
  const float eps = static_cast<float>(config.epsilon);
  const float inv_c1 = static_cast<float>(1.0 / c1);
  const float inv_c2 = static_cast<float>(1.0 / c2);

  auto params = w.trainable();
  auto m = state.m.trainable();
  auto v = state.v.trainable();
  auto g = grads.trainable();
  for (size_t i = 0; i < params.size(); ++i) {
    auto pa = params[i]->array();
    auto ma = m[i]->array();
    auto va = v[i]->array();
    const auto ga = g[i]->array();
    ma = b1 * ma + (1.0f - b1) * ga;
    va = b2 * va + (1.0f - b2) * ga.square();
    pa -= lr * (ma * inv_c1) / ((va * inv_c2).sqrt() + eps);
  }
}

namespace {

void update_running_stats(ModelWeights& w, const BatchStats& stats, float momentum) {
  auto update = [&](BatchNorm<float>& bn, const Eigen::VectorXd& mean, const Eigen::VectorXd& var) {
    bn.running_mean = momentum * bn.running_mean + (1.0f - momentum) * mean.transpose().cast<float>();
    bn.running_var = momentum * bn.running_var + (1.0f - momentum) * var.transpose().cast<float>();
  };
  update(w.conv_bn, stats.mean[0], stats.var[0]);
  for (size_t i = 0; i < w.fc_bn.size(); ++i) update(w.fc_bn[i], stats.mean[i + 1], stats.var[i + 1]);
}

std::vector<std::vector<size_t>> make_batches(const std::vector<size_t>& order, int batch_size) {
  std::vector<std::vector<size_t>> batches;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  // Batch norm needs at least two samples; fold a trailing singleton into
  // the previous batch.
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

}  // namespace

Split split_validation(std::vector<size_t> indices, double fraction, std::uint64_t seed) {
  if (indices.size() < 2) throw TooFewSamples("need at least two samples to split off validation");
  Rng rng(derive_seed(seed, 0x5A11D));
  rng.shuffle(std::span<size_t>(indices));
  auto n_val = static_cast<size_t>(std::lround(fraction * static_cast<double>(indices.size())));
  n_val = std::clamp<size_t>(n_val, 1, indices.size() - 1);
  Split split;
  split.validation.assign(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n_val));
  split.train.assign(indices.begin() + static_cast<std::ptrdiff_t>(n_val), indices.end());
  return split;
}

TrainResult train_split(std::span<const LabeledSample> data, std::span<const size_t> train_idx,
                        std::span<const size_t> val_idx, const NetworkSpec& spec,
                        const TrainConfig& config, const TrainObserver* observer) {
  spec.validate();
  config.validate();
  if (train_idx.size() < 2 || val_idx.empty()) {
    throw TooFewSamples("training needs at least two training and one validation sample");
  }
  bool has[2] = {false, false};
  for (size_t i : train_idx) has[data[i].label != 0] = true;
  if (!has[0] || !has[1]) throw SingleClassDataset("training set contains a single class");

  Rng init_rng(derive_seed(config.seed, 1));
  Rng shuffle_rng(derive_seed(config.seed, 2));
  Rng dropout_rng(derive_seed(config.seed, 3));

  ModelWeights w = init_weights(spec, init_rng);
  AdamState adam = AdamState::for_weights(w);
  TrainResult result;
  result.weights = w;
  result.best_val_acc = -1.0;
  int since_best = 0;

  std::vector<size_t> order(train_idx.begin(), train_idx.end());
  std::vector<const FeatureMatrix*> inputs;
  std::vector<int> labels;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<size_t>(order));
    double loss_sum = 0;
    size_t correct = 0;
    for (const auto& batch : make_batches(order, config.batch_size)) {
      if (observer && observer->on_train_batch) observer->on_train_batch(batch);
      inputs.clear();
      labels.clear();
      for (size_t i : batch) {
        inputs.push_back(&data[i].features);
        labels.push_back(data[i].label);
      }
      const auto masks = sample_dropout<float>(spec, static_cast<int>(batch.size()), dropout_rng);
      const auto g = gradients<float>(w, spec, inputs, labels, &masks);
      adam_step(w, adam, g.grads, config);
      update_running_stats(w, g.output.stats, spec.bn_momentum);
      loss_sum += static_cast<double>(g.loss) * static_cast<double>(batch.size());
      for (size_t b = 0; b < batch.size(); ++b) {
        correct += (classify_probability(g.output.probs[b]) == FmClass::FMplus) == (labels[b] == 1);
      }
    }
    if (observer && observer->on_validation) observer->on_validation(val_idx);
    const double val_acc = accuracy(w, spec, data, val_idx);
    result.history.push_back({epoch, loss_sum / static_cast<double>(order.size()),
                              static_cast<double>(correct) / static_cast<double>(order.size()),
                              val_acc});
    if (val_acc > result.best_val_acc) {
      result.best_val_acc = val_acc;
      result.best_epoch = epoch;
      result.weights = w;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

TrainResult train(std::span<const LabeledSample> data, const NetworkSpec& spec,
                  const TrainConfig& config) {
  std::vector<size_t> all(data.size());
  std::iota(all.begin(), all.end(), size_t{0});
  const auto split = split_validation(std::move(all), config.validation_fraction, config.seed);
  return train_split(data, split.train, split.validation, spec, config);
}

std::vector<double> predict(const ModelWeights& w, const NetworkSpec& spec,
                            std::span<const LabeledSample> data, std::span<const size_t> indices) {
  constexpr size_t kChunk = 64;
  std::vector<double> out;
  out.reserve(indices.size());
  std::vector<const FeatureMatrix*> inputs;
  for (size_t start = 0; start < indices.size(); start += kChunk) {
    inputs.clear();
    for (size_t i = start; i < std::min(indices.size(), start + kChunk); ++i) {
      inputs.push_back(&data[indices[i]].features);
    }
    for (float p : forward_batch(w, spec, inputs, Mode::Eval).probs) out.push_back(p);
  }
  return out;
}

double accuracy(const ModelWeights& w, const NetworkSpec& spec, std::span<const LabeledSample> data,
                std::span<const size_t> indices) {
  if (indices.empty()) return 0.0;
  const auto probs = predict(w, spec, data, indices);
  size_t correct = 0;
  for (size_t i = 0; i < indices.size(); ++i) {
    correct += (classify_probability(probs[i]) == FmClass::FMplus) == (data[indices[i]].label == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

FmClass classify(const ModelWeights& w, const NetworkSpec& spec, const FeatureMatrix& x,
                 double threshold) {
  return classify_probability(forward(w, spec, x, Mode::Eval), threshold);
}

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,train_loss,val_acc\n";
  for (const auto& e : history) out << fmt::format("{},{:.6f},{:.6f}\n", e.epoch, e.train_loss, e.val_acc);
}

// ---------------------------------------------------------------------------
// Serialisation

namespace {

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string save_weights(const NetworkSpec& spec, const ModelWeights& w) {
  check_shapes(w, spec);
  std::string out;
  binary::put_u32(out, kWeightsMagic);
  binary::put_u32(out, kWeightsVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(spec.frames));
  binary::put_u32(out, static_cast<std::uint32_t>(spec.channels));
  binary::put_u32(out, static_cast<std::uint32_t>(spec.filters));
  binary::put_u32(out, static_cast<std::uint32_t>(spec.filter_len));
  binary::put_u32(out, static_cast<std::uint32_t>(spec.fc_sizes.size()));
  for (int n : spec.fc_sizes) binary::put_u32(out, static_cast<std::uint32_t>(n));
  binary::put_f32(out, spec.dropout);
  binary::put_f32(out, spec.bn_momentum);
  binary::put_f32(out, spec.bn_epsilon);
  const auto tensors = w.all();
  binary::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    binary::put_u32(out, static_cast<std::uint32_t>(t->rows()));
    binary::put_u32(out, static_cast<std::uint32_t>(t->cols()));
    out.append(reinterpret_cast<const char*>(t->data()), static_cast<size_t>(t->size()) * sizeof(float));
  }
  binary::put_u32(out, crc_of(out));
  return out;
}

SavedModel load_weights(std::string_view bytes) {
  binary::Reader r(bytes);
  std::uint32_t magic = 0, version = 0;
  if (!r.get(magic) || magic != kWeightsMagic) throw FormatError("not a weight file");
  if (!r.get(version) || version != kWeightsVersion) {
    throw VersionMismatch(fmt::format("weight file version {} unsupported (expected {})", version,
                                      kWeightsVersion));
  }
  if (bytes.size() < 12) throw FormatError("truncated weight file");
  std::uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc_of(bytes.substr(0, bytes.size() - 4)) != stored_crc) {
    throw ChecksumFailure("weight file checksum mismatch");
  }

  auto u32 = [&]() {
    std::uint32_t v = 0;
    if (!r.get(v)) throw FormatError("truncated weight file");
    return v;
  };
  SavedModel model;
  NetworkSpec& spec = model.spec;
  spec.frames = static_cast<int>(u32());
  spec.channels = static_cast<int>(u32());
  spec.filters = static_cast<int>(u32());
  spec.filter_len = static_cast<int>(u32());
  const auto n_fc = u32();
  if (n_fc > 2) throw FormatError("bad layer count");
  spec.fc_sizes.clear();
  for (std::uint32_t i = 0; i < n_fc; ++i) spec.fc_sizes.push_back(static_cast<int>(u32()));
  if (!r.get(spec.dropout) || !r.get(spec.bn_momentum) || !r.get(spec.bn_epsilon)) {
    throw FormatError("truncated weight file");
  }
  try {
    model.weights = shaped_weights(spec);
  } catch (const ConfigError& e) {
    throw FormatError(fmt::format("invalid network descriptor: {}", e.what()));
  }
  auto tensors = model.weights.all();
  if (u32() != tensors.size()) throw FormatError("tensor count mismatch");
  for (auto* t : tensors) {
    const auto rows = u32();
    const auto cols = u32();
    if (rows != t->rows() || cols != t->cols()) throw FormatError("tensor shape mismatch");
    const size_t n = static_cast<size_t>(t->size()) * sizeof(float);
    if (r.remaining() < n + 4) throw FormatError("truncated tensor data");
    std::memcpy(t->data(), bytes.data() + r.position(), n);
    r.skip(n);
  }
  if (r.remaining() != 4) throw FormatError("trailing bytes in weight file");
  return model;
}

void save_weights_file(const std::string& path, const NetworkSpec& spec, const ModelWeights& w) {
  const auto bytes = save_weights(spec, w);
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError(fmt::format("failed writing {}", path));
}

SavedModel load_weights_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read {}", path));
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return load_weights(bytes);
}

// ---------------------------------------------------------------------------

template struct Parameters<float>;
template struct Parameters<double>;
template Parameters<double> Parameters<float>::cast<double>() const;
template Parameters<float> Parameters<double>::cast<float>() const;
template Parameters<float> Parameters<float>::cast<float>() const;
template void check_shapes(const Parameters<float>&, const NetworkSpec&);
template void check_shapes(const Parameters<double>&, const NetworkSpec&);
template DropoutMasks<float> sample_dropout<float>(const NetworkSpec&, int, Rng&);
template DropoutMasks<double> sample_dropout<double>(const NetworkSpec&, int, Rng&);
template DropoutMasks<float> no_dropout<float>(const NetworkSpec&, int);
template DropoutMasks<double> no_dropout<double>(const NetworkSpec&, int);
template BatchOutput<float> forward_batch(const Parameters<float>&, const NetworkSpec&,
                                          std::span<const FeatureMatrix* const>, Mode,
                                          const DropoutMasks<float>*);
template BatchOutput<double> forward_batch(const Parameters<double>&, const NetworkSpec&,
                                           std::span<const FeatureMatrix* const>, Mode,
                                           const DropoutMasks<double>*);
template GradientResult<float> gradients(const Parameters<float>&, const NetworkSpec&,
                                         std::span<const FeatureMatrix* const>, std::span<const int>,
                                         const DropoutMasks<float>*);
template GradientResult<double> gradients(const Parameters<double>&, const NetworkSpec&,
                                          std::span<const FeatureMatrix* const>,
                                          std::span<const int>, const DropoutMasks<double>*);

}  // namespace gma::nn
