#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gma/features.hpp"
#include "gma/rng.hpp"

namespace gma::nn {

/// conv(F x L over time, C input channels) -> BN -> ReLU -> dropout ->
/// flatten -> [FC -> BN -> ReLU (-> dropout)] x 1..2 -> logistic unit.
///
/// Dropout follows the FC stages only when two of them are configured; the
/// conv stage is always followed by dropout and the output unit never is.
struct NetworkSpec {
  int frames = kSnippetFrames;
  int channels = 42;
  int filters = 64;
  int filter_len = 7;
  std::vector<int> fc_sizes{200, 100};
  float dropout = 0.1f;
  float bn_momentum = 0.9f;
  float bn_epsilon = 1e-3f;

  void validate() const;
  int flat_size() const { return frames * filters; }
  bool fc_dropout() const { return fc_sizes.size() == 2; }
  std::string describe() const;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

template <typename T>
using Tensor = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct BatchNorm {
  Tensor<T> gamma, beta;               // trainable, 1 x n
  Tensor<T> running_mean, running_var;  // 1 x n
};

/// Every tensor of the network. Also used for gradients and Adam moments,
/// where the running statistics stay unused.
template <typename T>
struct Parameters {
  Tensor<T> conv_w;  // filters x (filter_len * channels); column = tap * channels + channel
  Tensor<T> conv_b;  // 1 x filters
  BatchNorm<T> conv_bn;
  std::vector<Tensor<T>> fc_w;  // out x in
  std::vector<Tensor<T>> fc_b;  // 1 x out
  std::vector<BatchNorm<T>> fc_bn;
  Tensor<T> out_w;  // 1 x last
  Tensor<T> out_b;  // 1 x 1

  /// Fixed order: conv w/b/gamma/beta, then per FC stage w/b/gamma/beta,
  /// then output w/b.
  std::vector<Tensor<T>*> trainable();
  std::vector<const Tensor<T>*> trainable() const;
  /// trainable() followed by the running statistics.
  std::vector<Tensor<T>*> all();
  std::vector<const Tensor<T>*> all() const;

  template <typename U>
  Parameters<U> cast() const;

  /// Same shapes, all zeros (running stats included).
  Parameters zeros_like() const;
};

using ModelWeights = Parameters<float>;

/// Glorot-uniform kernels, zero biases, unit BN scale, running var 1.
ModelWeights init_weights(const NetworkSpec& spec, Rng& rng);
ModelWeights zero_weights(const NetworkSpec& spec);

/// Checks tensor shapes against the network layout; throws ShapeMismatch.
template <typename T>
void check_shapes(const Parameters<T>& w, const NetworkSpec& spec);

/// Inverted-dropout multipliers (0 or 1/(1-rate)). Empty tensors mean the
/// stage has no dropout.
template <typename T>
struct DropoutMasks {
  Tensor<T> conv;            // (batch * frames) x filters
  std::vector<Tensor<T>> fc;  // batch x size
};

template <typename T>
DropoutMasks<T> sample_dropout(const NetworkSpec& spec, int batch, Rng& rng);
/// All-ones masks (dropout disabled, train-mode BN kept).
template <typename T>
DropoutMasks<T> no_dropout(const NetworkSpec& spec, int batch);

enum class Mode { Train, Eval };

struct BatchStats {
  std::vector<Eigen::VectorXd> mean;  // conv, fc...
  std::vector<Eigen::VectorXd> var;
};

template <typename T>
struct BatchOutput {
  std::vector<T> probs;
  BatchStats stats;  // batch statistics (train mode only)
};

/// Forward pass over a batch of feature matrices. In Train mode BN uses
/// batch statistics and `masks` (nullptr = no dropout) are applied.
template <typename T>
BatchOutput<T> forward_batch(const Parameters<T>& w, const NetworkSpec& spec,
                             std::span<const FeatureMatrix* const> batch, Mode mode,
                             const DropoutMasks<T>* masks = nullptr);

/// Single-sample convenience. Train mode draws dropout masks from `rng`.
double forward(const ModelWeights& w, const NetworkSpec& spec, const FeatureMatrix& x, Mode mode,
               Rng* rng = nullptr);

/// p clamped to [1e-7, 1-1e-7].
double bce_loss(double p, double y);
inline constexpr double kProbClamp = 1e-7;

struct LabeledSample {
  FeatureMatrix features;
  int label = 0;  // 1 = FM+, 0 = FM-
};

template <typename T>
struct GradientResult {
  T loss = 0;  // mean BCE over the batch
  Parameters<T> grads;
  BatchOutput<T> output;
};

/// Exact gradients of the mean batch loss under train-mode BN and the given
/// masks (nullptr = no dropout).
template <typename T>
GradientResult<T> gradients(const Parameters<T>& w, const NetworkSpec& spec,
                            std::span<const FeatureMatrix* const> batch, std::span<const int> labels,
                            const DropoutMasks<T>* masks);

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 32;
  double validation_fraction = 1.0 / 8.0;
  int patience = 10;
  int max_epochs = 500;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamState {
  ModelWeights m, v;
  long step = 0;

  static AdamState for_weights(const ModelWeights& w);
};

void adam_step(ModelWeights& w, AdamState& state, const ModelWeights& grads,
               const TrainConfig& config);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double train_acc = 0;  // train-mode predictions during the epoch
  double val_acc = 0;
};

struct TrainResult {
  ModelWeights weights;  // snapshot with the best validation accuracy
  std::vector<EpochRecord> history;
  double best_val_acc = 0;
  int best_epoch = 0;
};

/// Sees every dataset index used for parameter updates and for validation.
struct TrainObserver {
  std::function<void(std::span<const size_t>)> on_train_batch;
  std::function<void(std::span<const size_t>)> on_validation;
};

struct Split {
  std::vector<size_t> train;
  std::vector<size_t> validation;
};

/// Seeded shuffle of `indices`, the first round(fraction * n) (at least 1)
/// become the validation set.
Split split_validation(std::vector<size_t> indices, double fraction, std::uint64_t seed);

/// Early-stopped training on explicit train/validation index sets.
TrainResult train_split(std::span<const LabeledSample> data, std::span<const size_t> train_idx,
                        std::span<const size_t> val_idx, const NetworkSpec& spec,
                        const TrainConfig& config, const TrainObserver* observer = nullptr);

/// Splits off the validation fraction and trains.
TrainResult train(std::span<const LabeledSample> data, const NetworkSpec& spec,
                  const TrainConfig& config);

/// Eval-mode probabilities, processed in chunks.
std::vector<double> predict(const ModelWeights& w, const NetworkSpec& spec,
                            std::span<const LabeledSample> data, std::span<const size_t> indices);
double accuracy(const ModelWeights& w, const NetworkSpec& spec, std::span<const LabeledSample> data,
                std::span<const size_t> indices);

enum class FmClass { FMminus = 0, FMplus = 1 };

/// FM+ iff p > threshold.
inline FmClass classify_probability(double p, double threshold = 0.5) {
  return p > threshold ? FmClass::FMplus : FmClass::FMminus;
}
FmClass classify(const ModelWeights& w, const NetworkSpec& spec, const FeatureMatrix& x,
                 double threshold = 0.5);

void write_history_csv(std::ostream& out, std::span<const EpochRecord> history);

inline constexpr std::uint32_t kWeightsMagic = 0x57414D47;  // "GMAW"
inline constexpr std::uint32_t kWeightsVersion = 1;

struct SavedModel {
  NetworkSpec spec;
  ModelWeights weights;
};

/// magic, version, spec descriptor, tensors (rows, cols, float32 data),
/// CRC-32 of everything before it. All little-endian.
std::string save_weights(const NetworkSpec& spec, const ModelWeights& w);
SavedModel load_weights(std::string_view bytes);
void save_weights_file(const std::string& path, const NetworkSpec& spec, const ModelWeights& w);
SavedModel load_weights_file(const std::string& path);

}  // namespace gma::nn
