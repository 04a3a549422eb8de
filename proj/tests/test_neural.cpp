#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "gma/errors.hpp"
#include "gma/neural.hpp"

using namespace gma;
using namespace gma::nn;

namespace {

FeatureMatrix random_features(int rows, int cols, Rng& rng) {
  FeatureMatrix x{rows, cols, FeatureMode::WithHead, std::vector<float>(static_cast<size_t>(rows * cols))};
  for (auto& v : x.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return x;
}

NetworkSpec small_spec() {
  NetworkSpec s;
  s.frames = 8;
  s.channels = 3;
  s.filters = 3;
  s.filter_len = 3;
  s.fc_sizes = {5, 4};
  return s;
}

// Perturbs every scalar of `w` and compares the analytic float gradient with
// a central difference taken in double precision.
double max_relative_error(const NetworkSpec& spec, const ModelWeights& w,
                          const std::vector<FeatureMatrix>& xs, const std::vector<int>& ys,
                          const DropoutMasks<float>& masks_f, int& checked) {
  std::vector<const FeatureMatrix*> batch;
  for (const auto& x : xs) batch.push_back(&x);
  const auto analytic = gradients<float>(w, spec, batch, ys, &masks_f);

  DropoutMasks<double> masks_d{masks_f.conv.cast<double>(), {}};
  for (const auto& m : masks_f.fc) masks_d.fc.push_back(m.cast<double>());
  Parameters<double> wd = w.cast<double>();
  auto loss_at = [&](const Parameters<double>& p) {
    const auto out = forward_batch<double>(p, spec, batch, Mode::Train, &masks_d);
    double l = 0;
    for (size_t i = 0; i < ys.size(); ++i) l += bce_loss(out.probs[i], ys[i]);
    return l / static_cast<double>(ys.size());
  };

  constexpr double h = 1e-3;
  constexpr double floor = 1e-3;
  double worst = 0;
  auto params = wd.trainable();
  auto grads = analytic.grads.trainable();
  for (size_t t = 0; t < params.size(); ++t) {
    for (Eigen::Index i = 0; i < params[t]->size(); ++i) {
      double& v = params[t]->data()[i];
      const double saved = v;
      v = saved + h;
      const double up = loss_at(wd);
      v = saved - h;
      const double down = loss_at(wd);
      v = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = grads[t]->data()[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, err);
      ++checked;
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("zero weights give p = 0.5 and classify as FM-") {
  NetworkSpec spec = small_spec();
  const auto w = zero_weights(spec);
  Rng rng(1);
  const auto x = random_features(spec.frames, spec.channels, rng);
  CHECK(forward(w, spec, x, Mode::Eval) == 0.5);
  CHECK(classify(w, spec, x) == FmClass::FMminus);
}

TEST_CASE("eval mode is deterministic") {
  const NetworkSpec spec = small_spec();
  Rng rng(2);
  const auto w = init_weights(spec, rng);
  const auto x = random_features(spec.frames, spec.channels, rng);
  CHECK(forward(w, spec, x, Mode::Eval) == forward(w, spec, x, Mode::Eval));
}

TEST_CASE("toy network matches a hand evaluation") {
  NetworkSpec spec;
  spec.frames = 2;
  spec.channels = 1;
  spec.filters = 1;
  spec.filter_len = 3;
  spec.fc_sizes = {1};
  ModelWeights w = zero_weights(spec);
  // taps: previous, current, next frame
  w.conv_w << 0.2f, 0.5f, -0.3f;
  w.conv_b << 0.1f;
  w.conv_bn.gamma << 1.5f;
  w.conv_bn.beta << 0.05f;
  w.conv_bn.running_mean << 0.2f;
  w.conv_bn.running_var << 0.25f;
  w.fc_w[0] << 0.3f, -0.2f;
  w.fc_b[0] << 0.05f;
  w.fc_bn[0].gamma << 2.0f;
  w.fc_bn[0].beta << 0.1f;
  w.fc_bn[0].running_mean << -0.1f;
  w.fc_bn[0].running_var << 4.0f;
  w.out_w << 1.2f;
  w.out_b << -0.4f;
  FeatureMatrix x{2, 1, FeatureMode::WithHead, {1.0f, 2.0f}};

  const double eps = 1e-3;
  // conv, zero padded: frame 1 sees (0, 1, 2), frame 2 sees (1, 2, 0)
  const double z1 = 0.2 * 0 + 0.5 * 1 - 0.3 * 2 + 0.1;  // 0.0
  const double z2 = 0.2 * 1 + 0.5 * 2 - 0.3 * 0 + 0.1;  // 1.3
  auto bn_relu = [&](double z, double mean, double var, double g, double b) {
    return std::max(0.0, (z - mean) / std::sqrt(var + eps) * g + b);
  };
  const double a1 = bn_relu(z1, 0.2, 0.25, 1.5, 0.05);
  const double a2 = bn_relu(z2, 0.2, 0.25, 1.5, 0.05);
  CHECK(a1 == 0.0);
  const double f = bn_relu(0.3 * a1 - 0.2 * a2 + 0.05, -0.1, 4.0, 2.0, 0.1);
  const double logit = 1.2 * f - 0.4;
  const double expected = 1.0 / (1.0 + std::exp(-logit));
  CHECK(forward(w, spec, x, Mode::Eval) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("binary cross-entropy") {
  CHECK(bce_loss(0.5, 0) == doctest::Approx(std::log(2.0)));
  CHECK(bce_loss(0.5, 1) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(bce_loss(1.0, 1) <= 1.2e-7);
  CHECK(bce_loss(0.0, 0) <= 1.2e-7);
  CHECK(bce_loss(0.9, 1) == doctest::Approx(0.10536).epsilon(1e-4));
  CHECK(std::isfinite(bce_loss(0.0, 1)));
}

TEST_CASE("analytic gradients agree with central differences") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    CAPTURE(seed);
    NetworkSpec spec = small_spec();
    if (seed == 13) spec.fc_sizes = {6};
    Rng rng(seed);
    const auto w = init_weights(spec, rng);
    std::vector<FeatureMatrix> xs;
    std::vector<int> ys;
    for (int i = 0; i < 4; ++i) {
      xs.push_back(random_features(spec.frames, spec.channels, rng));
      ys.push_back(i % 2);
    }
    const auto masks = sample_dropout<float>(spec, 4, rng);
    int checked = 0;
    const double err = max_relative_error(spec, w, xs, ys, masks, checked);
    CHECK(checked > 100);
    CHECK(err <= 1e-3);
  }
}

TEST_CASE("output layer gradient is activation times output delta") {
  NetworkSpec spec;
  spec.frames = 2;
  spec.channels = 1;
  spec.filters = 1;
  spec.filter_len = 1;
  spec.fc_sizes = {2};
  ModelWeights w = zero_weights(spec);
  // One-sample batch: batch-norm output collapses to its shift.
  w.fc_bn[0].beta << 0.4f, -0.7f;
  w.out_w << 0.5f, 2.0f;
  w.out_b << 0.1f;
  FeatureMatrix x{2, 1, FeatureMode::WithHead, {0.3f, -0.2f}};
  const FeatureMatrix* batch[] = {&x};
  const int label[] = {1};
  const auto g = gradients<float>(w, spec, batch, label, nullptr);
  const double a0 = 0.4, a1 = 0.0;  // ReLU of the shifts
  const double p = 1.0 / (1.0 + std::exp(-(0.5 * a0 + 2.0 * a1 + 0.1)));
  const double delta = p - 1.0;
  CHECK(g.output.probs[0] == doctest::Approx(p).epsilon(1e-6));
  CHECK(g.grads.out_w(0, 0) == doctest::Approx(delta * a0).epsilon(1e-6));
  CHECK(g.grads.out_w(0, 1) == 0.0f);
  CHECK(g.grads.out_b(0, 0) == doctest::Approx(delta).epsilon(1e-6));
}

TEST_CASE("a dropped unit receives no gradient") {
  const NetworkSpec spec = small_spec();
  Rng rng(21);
  const auto w = init_weights(spec, rng);
  std::vector<FeatureMatrix> xs;
  std::vector<const FeatureMatrix*> batch;
  for (int i = 0; i < 4; ++i) xs.push_back(random_features(spec.frames, spec.channels, rng));
  for (const auto& x : xs) batch.push_back(&x);
  const int labels[] = {0, 1, 1, 0};
  auto masks = no_dropout<float>(spec, 4);
  masks.fc[0].col(2).setZero();
  masks.conv.col(1).setZero();
  const auto g = gradients<float>(w, spec, batch, labels, &masks);
  CHECK(g.grads.fc_w[0].row(2).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(g.grads.fc_b[0](0, 2) == 0.0f);
  CHECK(g.grads.fc_w[0].row(1).cwiseAbs().maxCoeff() > 0.0f);
  CHECK(g.grads.conv_w.row(1).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(g.grads.conv_w.row(0).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("Adam steps") {
  const NetworkSpec spec = small_spec();
  Rng rng(5);
  const auto start = init_weights(spec, rng);
  TrainConfig config;

  SUBCASE("first step moves by the step size against the gradient sign") {
    ModelWeights w = start;
    auto state = AdamState::for_weights(w);
    ModelWeights g = w.zeros_like();
    g.conv_w.setConstant(0.37f);
    g.out_w.setConstant(-2.5f);
    adam_step(w, state, g, config);
    CHECK(((w.conv_w - start.conv_w).array() + 1e-3f).abs().maxCoeff() < 1e-7f);
    CHECK(((w.out_w - start.out_w).array() - 1e-3f).abs().maxCoeff() < 1e-7f);
    CHECK(w.fc_w[0] == start.fc_w[0]);
  }
  SUBCASE("zero gradient is a fixed point") {
    ModelWeights w = start;
    auto state = AdamState::for_weights(w);
    const ModelWeights g = w.zeros_like();
    for (int i = 0; i < 3; ++i) adam_step(w, state, g, config);
    auto a = w.all();
    auto b = start.all();
    for (size_t i = 0; i < a.size(); ++i) CHECK(*a[i] == *b[i]);
  }
  SUBCASE("two steps with unit gradient") {
    ModelWeights w = start;
    auto state = AdamState::for_weights(w);
    ModelWeights g = w.zeros_like();
    g.out_b.setConstant(1.0f);
    // m1 = 0.1, v1 = 0.001 -> m^ = v^ = 1; m2 = 0.19, v2 = 0.001999 -> m^ = v^ = 1
    const double step = 1e-3 / (1.0 + 1e-8);
    adam_step(w, state, g, config);
    adam_step(w, state, g, config);
    CHECK(state.m.out_b(0, 0) == doctest::Approx(0.19));
    CHECK(state.v.out_b(0, 0) == doctest::Approx(0.001999));
    CHECK(static_cast<double>(start.out_b(0, 0) - w.out_b(0, 0)) ==
          doctest::Approx(2 * step).epsilon(1e-5));
  }
}

namespace {

std::vector<LabeledSample> separable_set(const NetworkSpec& spec, int n, Rng& rng) {
  std::vector<LabeledSample> data;
  for (int i = 0; i < n; ++i) {
    LabeledSample s{random_features(spec.frames, spec.channels, rng), i % 2};
    for (int t = 0; t < spec.frames; ++t) {
      s.features.values[static_cast<size_t>(t * spec.channels)] = s.label ? 0.8f : -0.8f;
    }
    data.push_back(std::move(s));
  }
  return data;
}

NetworkSpec train_spec() {
  NetworkSpec s;
  s.frames = 20;
  s.channels = 4;
  s.filters = 4;
  s.filter_len = 3;
  s.fc_sizes = {8};
  return s;
}

}  // namespace

TEST_CASE("training separates a linearly separable set") {
  const NetworkSpec spec = train_spec();
  Rng rng(8);
  const auto data = separable_set(spec, 16, rng);
  TrainConfig config;
  config.seed = 3;
  config.batch_size = 4;
  config.learning_rate = 1e-2;
  config.max_epochs = 200;
  std::vector<size_t> all(data.size());
  std::iota(all.begin(), all.end(), size_t{0});
  // Validating on the training set makes the stopping rule track training accuracy.
  const auto result = train_split(data, all, all, spec, config);
  CHECK(accuracy(result.weights, spec, data, all) == 1.0);
  CHECK(static_cast<int>(result.history.size()) < config.max_epochs);
  CHECK(result.best_val_acc == 1.0);
}

TEST_CASE("training is bit-reproducible") {
  const NetworkSpec spec = train_spec();
  Rng rng(9);
  const auto data = separable_set(spec, 24, rng);
  TrainConfig config;
  config.seed = 77;
  config.batch_size = 8;
  config.max_epochs = 15;
  const auto a = train(data, spec, config);
  const auto b = train(data, spec, config);
  CHECK(save_weights(spec, a.weights) == save_weights(spec, b.weights));
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].train_loss == b.history[i].train_loss);
  config.seed = 78;
  CHECK(save_weights(spec, train(data, spec, config).weights) != save_weights(spec, a.weights));
}

TEST_CASE("frozen validation accuracy stops after patience epochs") {
  const NetworkSpec spec = train_spec();
  Rng rng(10);
  auto data = separable_set(spec, 18, rng);
  // Two identical validation inputs with opposite labels: accuracy is 0.5 forever.
  data[17].features = data[16].features;
  data[16].label = 0;
  data[17].label = 1;
  std::vector<size_t> train_idx(16);
  std::iota(train_idx.begin(), train_idx.end(), size_t{0});
  const std::vector<size_t> val_idx{16, 17};
  TrainConfig config;
  config.batch_size = 4;
  config.patience = 10;
  const auto result = train_split(data, train_idx, val_idx, spec, config);
  CHECK(result.history.size() == 11);
  CHECK(result.best_epoch == 1);
  for (const auto& e : result.history) CHECK(e.val_acc == 0.5);
}

TEST_CASE("training rejects single-class data") {
  const NetworkSpec spec = train_spec();
  Rng rng(12);
  auto data = separable_set(spec, 16, rng);
  for (auto& s : data) s.label = 1;
  CHECK_THROWS_AS(train(data, spec, TrainConfig{}), SingleClassDataset);
}

TEST_CASE("training never sees validation samples in updates") {
  const NetworkSpec spec = train_spec();
  Rng rng(13);
  const auto data = separable_set(spec, 40, rng);
  const auto split = split_validation([] {
    std::vector<size_t> v(40);
    std::iota(v.begin(), v.end(), size_t{0});
    return v;
  }(), 1.0 / 8, 4);
  CHECK(split.validation.size() == 5);
  std::vector<int> seen(40, 0);
  TrainObserver obs;
  obs.on_train_batch = [&](std::span<const size_t> idx) {
    for (size_t i : idx) seen[i] |= 1;
  };
  TrainConfig config;
  config.max_epochs = 3;
  train_split(data, split.train, split.validation, spec, config, &obs);
  for (size_t v : split.validation) CHECK(seen[v] == 0);
  for (size_t t : split.train) CHECK(seen[t] == 1);
}

TEST_CASE("classification threshold") {
  CHECK(classify_probability(0.7) == FmClass::FMplus);
  CHECK(classify_probability(0.5) == FmClass::FMminus);
  CHECK(classify_probability(0.5000001) == FmClass::FMplus);
}

TEST_CASE("wrong input shape is rejected") {
  const NetworkSpec spec = small_spec();
  Rng rng(3);
  const auto w = init_weights(spec, rng);
  const auto x = random_features(spec.frames + 1, spec.channels, rng);
  CHECK_THROWS_AS(forward(w, spec, x, Mode::Eval), ShapeMismatch);
}

TEST_CASE("eval mode with running stats set to batch stats reproduces train mode") {
  NetworkSpec spec = small_spec();
  Rng rng(31);
  auto w = init_weights(spec, rng);
  std::vector<FeatureMatrix> xs;
  std::vector<const FeatureMatrix*> batch;
  for (int i = 0; i < 6; ++i) xs.push_back(random_features(spec.frames, spec.channels, rng));
  for (const auto& x : xs) batch.push_back(&x);
  const auto train_out = forward_batch<float>(w, spec, batch, Mode::Train, nullptr);
  w.conv_bn.running_mean = train_out.stats.mean[0].transpose().cast<float>();
  w.conv_bn.running_var = train_out.stats.var[0].transpose().cast<float>();
  for (size_t i = 0; i < w.fc_bn.size(); ++i) {
    w.fc_bn[i].running_mean = train_out.stats.mean[i + 1].transpose().cast<float>();
    w.fc_bn[i].running_var = train_out.stats.var[i + 1].transpose().cast<float>();
  }
  const auto eval_out = forward_batch<float>(w, spec, batch, Mode::Eval);
  for (size_t i = 0; i < xs.size(); ++i) CHECK(std::abs(eval_out.probs[i] - train_out.probs[i]) < 1e-5);
}

TEST_CASE("weight serialisation") {
  const NetworkSpec spec = small_spec();
  Rng rng(4);
  auto w = init_weights(spec, rng);
  w.conv_bn.running_var.setConstant(0.75f);
  const auto bytes = save_weights(spec, w);
  const auto loaded = load_weights(bytes);
  CHECK(loaded.spec == spec);
  auto a = loaded.weights.all();
  auto b = w.all();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(a[i]->data(), b[i]->data(), static_cast<size_t>(a[i]->size()) * 4) == 0);
  }

  auto bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_AS(load_weights(bad_version), VersionMismatch);
  auto corrupt = bytes;
  corrupt[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(load_weights(corrupt), ChecksumFailure);
  CHECK_THROWS_AS(load_weights(bytes.substr(0, 3)), FormatError);
}

TEST_CASE("history CSV") {
  std::vector<EpochRecord> h{{1, 0.5, 0.6, 0.75}, {2, 0.25, 0.8, 0.875}};
  std::ostringstream out;
  write_history_csv(out, h);
  CHECK(out.str() == "epoch,train_loss,val_acc\n1,0.500000,0.750000\n2,0.250000,0.875000\n");
}
