#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gma/neural.hpp"

namespace gma::eval {

struct FoldPlan {
  size_t n = 0;
  int k = 0;
  std::vector<std::vector<size_t>> folds;

  /// Every index not in fold `f`, ascending.
  std::vector<size_t> complement(int f) const;
};

/// Seeded shuffle of 0..n-1 cut into k contiguous slices; the first n % k
/// folds get one extra index. Throws TooFewSamples if n < k.
FoldPlan kfold_split(size_t n, int k, std::uint64_t seed);

/// Argmax, lowest index on ties.
size_t select_best(std::span<const double> val_accs);

struct Selection {
  nn::TrainResult best;
  size_t repeat = 0;  // 0-based
  std::vector<double> val_accs;
};

/// Calls run(r, seed + 1 + r) for r = 0..m-1 and keeps the run with the
/// best validation accuracy.
Selection best_of_repeats(const std::function<nn::TrainResult(size_t, std::uint64_t)>& run, size_t m,
                          std::uint64_t seed, int jobs = 1);

struct MeanCi {
  double mean = 0;
  double half_width = 0;
};

/// Mean and 95% Student-t half-width (df = n - 1).
MeanCi mean_ci95(std::span<const double> values);

/// "85.0349 ±1.2096"
std::string format_mean_ci(const MeanCi& m);

struct CvConfig {
  int folds = 5;
  size_t repeats = 10;
  std::uint64_t seed = 0;
  int jobs = 1;
  nn::TrainConfig train;
};

struct FoldOutcome {
  std::vector<size_t> test;
  nn::Split split;
  size_t selected_repeat = 0;
  std::vector<double> val_accs;
  double test_acc = 0;  // percent
};

struct CvResult {
  std::vector<double> fold_accs;  // percent
  MeanCi summary;
  std::vector<FoldOutcome> folds;
};

/// Receives every index that feeds a parameter update or a validation pass,
/// tagged with its fold. May be called from several threads when jobs > 1.
using CvIndexHook = std::function<void(int fold, std::span<const size_t> indices)>;

CvResult run_cv(std::span<const nn::LabeledSample> data, const nn::NetworkSpec& spec,
                const CvConfig& config, const CvIndexHook& hook = {});

enum class TTestKind { Pooled, Welch };

struct TTestResult {
  double t = 0;
  double df = 0;
  double p = 1;
};

/// Two-sided two-sample t-test. Throws TooFewSamples if either sample has
/// fewer than two values.
TTestResult ttest_two_sample(std::span<const double> a, std::span<const double> b,
                             TTestKind kind = TTestKind::Pooled);

// ---------------------------------------------------------------------------
// Ablation

struct CellKey {
  FeatureMode condition = FeatureMode::WithHead;
  std::vector<int> fc_sizes;
  int filters = 64;
  int filter_len = 7;

  /// "with-head|200,100|64|7"
  std::string id() const;
  friend bool operator==(const CellKey&, const CellKey&) = default;
};

enum class GridAxis { FcOne, FcTwo, FilterLength, FilterCount };
std::string_view to_string(GridAxis axis);

struct GridRow {
  GridAxis axis;
  CellKey key;  // condition is filled per column
};

/// Rows of the neuron-count table (one and two FC layers).
std::vector<GridRow> fc_grid();
/// Rows of the filter table (lengths, then counts).
std::vector<GridRow> conv_grid();
std::vector<GridRow> grid_by_name(std::string_view name);  // "fc" | "conv"

/// Expands rows into cells for both conditions.
std::vector<CellKey> grid_cells(std::span<const GridRow> rows);

struct AblationCell {
  CellKey key;
  std::vector<double> fold_accs;
  MeanCi summary;
};

/// CSV-backed store of finished cells. Each commit rewrites the file via a
/// temporary and rename, so an interrupted run leaves the last complete state.
class ResultsStore {
 public:
  explicit ResultsStore(std::filesystem::path path);

  const AblationCell* find(const CellKey& key) const;
  void commit(const AblationCell& cell);
  const std::vector<AblationCell>& cells() const { return cells_; }

 private:
  std::filesystem::path path_;
  std::vector<AblationCell> cells_;
};

void write_cells_csv(std::ostream& out, std::span<const AblationCell> cells);
std::vector<AblationCell> read_cells_csv(std::istream& in);

using CellRunner = std::function<CvResult(const CellKey&)>;

/// Cross-validates each cell not yet in the store, committing as it goes.
/// Returns the cells of `grid` in grid order.
std::vector<AblationCell> ablation_run(std::span<const GridRow> grid, ResultsStore& store,
                                       const CellRunner& runner,
                                       const std::function<void(const AblationCell&, bool cached)>& progress = {});

/// Runner that cross-validates the matching feature set for each condition.
CellRunner make_cv_runner(const std::map<FeatureMode, std::vector<nn::LabeledSample>>& datasets,
                          const nn::NetworkSpec& base, const CvConfig& config);

/// Table with Without/With head columns per row; the best mean within each
/// group and condition is marked with '*'.
std::string format_ablation_table(std::span<const GridRow> grid, std::span<const AblationCell> cells);

}  // namespace gma::eval
