#include "gma/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <fmt/format.h>

#include "gma/errors.hpp"
#include "gma/parallel.hpp"

namespace gma::eval {

std::vector<size_t> FoldPlan::complement(int f) const {
  std::vector<size_t> out;
  out.reserve(n);
  for (int g = 0; g < k; ++g) {
    if (g != f) out.insert(out.end(), folds[static_cast<size_t>(g)].begin(), folds[static_cast<size_t>(g)].end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

FoldPlan kfold_split(size_t n, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be >= 2");
  if (n < static_cast<size_t>(k)) {
    throw TooFewSamples(fmt::format("{} samples cannot fill {} folds", n, k));
  }
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<size_t>(order));

  FoldPlan plan{n, k, {}};
  const size_t base = n / static_cast<size_t>(k);
  const size_t extra = n % static_cast<size_t>(k);
  size_t pos = 0;
  for (size_t f = 0; f < static_cast<size_t>(k); ++f) {
    const size_t size = base + (f < extra ? 1 : 0);
    plan.folds.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                            order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return plan;
}

size_t select_best(std::span<const double> val_accs) {
  if (val_accs.empty()) throw ConfigError("no runs to select from");
  return static_cast<size_t>(std::max_element(val_accs.begin(), val_accs.end()) - val_accs.begin());
}

Selection best_of_repeats(const std::function<nn::TrainResult(size_t, std::uint64_t)>& run, size_t m,
                          std::uint64_t seed, int jobs) {
  if (m < 1) throw ConfigError("repeat count must be >= 1");
  Selection sel;
  sel.val_accs.assign(m, 0.0);
  std::optional<size_t> best;
  std::mutex mutex;
  // Only the leading run is retained; large grid cells would not fit otherwise.
  parallel_for(m, jobs, [&](size_t r) {
    nn::TrainResult result = run(r, seed + 1 + r);
    std::lock_guard lock(mutex);
    sel.val_accs[r] = result.best_val_acc;
    if (!best || result.best_val_acc > sel.val_accs[*best] ||
        (result.best_val_acc == sel.val_accs[*best] && r < *best)) {
      best = r;
      sel.best = std::move(result);
    }
  });
  sel.repeat = *best;
  return sel;
}

MeanCi mean_ci95(std::span<const double> values) {
  if (values.size() < 2) throw TooFewSamples("a confidence interval needs at least two values");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1));
  const boost::math::students_t dist(n - 1);
  const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
  return {mean, q * sd / std::sqrt(n)};
}

std::string format_mean_ci(const MeanCi& m) { return fmt::format("{:.4f} ±{:.4f}", m.mean, m.half_width); }

CvResult run_cv(std::span<const nn::LabeledSample> data, const nn::NetworkSpec& spec,
                const CvConfig& config, const CvIndexHook& hook) {
  config.train.validate();
  const FoldPlan plan = kfold_split(data.size(), config.folds, derive_seed(config.seed, 0xF01D));
  CvResult result;
  for (int f = 0; f < config.folds; ++f) {
    FoldOutcome fold;
    fold.test = plan.folds[static_cast<size_t>(f)];
    fold.split = nn::split_validation(plan.complement(f), config.train.validation_fraction,
                                      derive_seed(config.seed, 0x5000 + static_cast<std::uint64_t>(f)));

    nn::TrainObserver observer;
    if (hook) {
      observer.on_train_batch = [&](std::span<const size_t> idx) { hook(f, idx); };
      observer.on_validation = observer.on_train_batch;
    }
    auto run_one = [&](size_t, std::uint64_t seed) {
      nn::TrainConfig tc = config.train;
      tc.seed = seed;
      return nn::train_split(data, fold.split.train, fold.split.validation, spec, tc,
                             hook ? &observer : nullptr);
    };
    const auto base_seed = derive_seed(config.seed, 0x6000 + static_cast<std::uint64_t>(f));
    Selection sel = best_of_repeats(run_one, config.repeats, base_seed, config.jobs);
    fold.selected_repeat = sel.repeat;
    fold.val_accs = std::move(sel.val_accs);
    fold.test_acc = 100.0 * nn::accuracy(sel.best.weights, spec, data, fold.test);
    result.fold_accs.push_back(fold.test_acc);
    result.folds.push_back(std::move(fold));
  }
  result.summary = mean_ci95(result.fold_accs);
  return result;
}

TTestResult ttest_two_sample(std::span<const double> a, std::span<const double> b, TTestKind kind) {
  if (a.size() < 2 || b.size() < 2) throw TooFewSamples("t-test needs at least two values per sample");
  auto moments = [](std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (n - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());

  TTestResult r;
  double se2 = 0;
  if (kind == TTestKind::Pooled) {
    r.df = na + nb - 2;
    const double pooled = ((na - 1) * va + (nb - 1) * vb) / r.df;
    se2 = pooled * (1 / na + 1 / nb);
  } else {
    const double qa = va / na;
    const double qb = vb / nb;
    se2 = qa + qb;
    r.df = se2 > 0 ? se2 * se2 / (qa * qa / (na - 1) + qb * qb / (nb - 1)) : na + nb - 2;
  }
  const double diff = ma - mb;
  if (se2 == 0) {
    r.t = diff == 0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p = diff == 0 ? 1.0 : 0.0;
    return r;
  }
  r.t = diff / std::sqrt(se2);
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

// ---------------------------------------------------------------------------
// Ablation

namespace {

std::string join_sizes(const std::vector<int>& sizes, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(sizes[i]);
  }
  return out;
}

std::vector<int> parse_sizes(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ';')) out.push_back(std::stoi(part));
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

}  // namespace

std::string CellKey::id() const {
  return fmt::format("{}|{}|{}|{}", to_string(condition), join_sizes(fc_sizes, ","), filters, filter_len);
}

std::string_view to_string(GridAxis axis) {
  switch (axis) {
    case GridAxis::FcOne: return "One fully connected layer (64 filters of size 7x1)";
    case GridAxis::FcTwo: return "Two fully connected layers (64 filters of size 7x1)";
    case GridAxis::FilterLength: return "64 filters, two fully connected layers (200, 100)";
    case GridAxis::FilterCount: return "Filter size 7x1, two fully connected layers (200, 100)";
  }
  return "";
}

std::vector<GridRow> fc_grid() {
  std::vector<GridRow> rows;
  for (int n : {50, 100, 150, 200, 300, 500}) rows.push_back({GridAxis::FcOne, {FeatureMode::WithHead, {n}, 64, 7}});
  const std::pair<int, int> pairs[] = {{50, 25},   {100, 50},  {150, 100}, {200, 100},
                                       {300, 150}, {300, 200}, {500, 250}, {500, 300}};
  for (auto [a, b] : pairs) rows.push_back({GridAxis::FcTwo, {FeatureMode::WithHead, {a, b}, 64, 7}});
  return rows;
}

std::vector<GridRow> conv_grid() {
  std::vector<GridRow> rows;
  for (int l : {5, 7, 9, 15, 21, 31}) rows.push_back({GridAxis::FilterLength, {FeatureMode::WithHead, {200, 100}, 64, l}});
  for (int f : {16, 32, 64, 128, 256, 512}) rows.push_back({GridAxis::FilterCount, {FeatureMode::WithHead, {200, 100}, f, 7}});
  return rows;
}

std::vector<GridRow> grid_by_name(std::string_view name) {
  if (name == "fc") return fc_grid();
  if (name == "conv") return conv_grid();
  throw ConfigError(fmt::format("unknown ablation grid '{}' (expected fc or conv)", name));
}

std::vector<CellKey> grid_cells(std::span<const GridRow> rows) {
  std::vector<CellKey> cells;
  for (auto mode : {FeatureMode::WithoutHead, FeatureMode::WithHead}) {
    for (const auto& row : rows) {
      CellKey key = row.key;
      key.condition = mode;
      cells.push_back(std::move(key));
    }
  }
  return cells;
}

ResultsStore::ResultsStore(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  if (!in) throw DataError(fmt::format("cannot read results store {}", path_.string()));
  cells_ = read_cells_csv(in);
}

const AblationCell* ResultsStore::find(const CellKey& key) const {
  for (const auto& c : cells_) {
    if (c.key == key) return &c;
  }
  return nullptr;
}

void ResultsStore::commit(const AblationCell& cell) {
  auto it = std::find_if(cells_.begin(), cells_.end(), [&](const auto& c) { return c.key == cell.key; });
  if (it != cells_.end()) {
    *it = cell;
  } else {
    cells_.push_back(cell);
  }
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  auto tmp = path_;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    write_cells_csv(out, cells_);
    out.flush();
    if (!out) throw DataError(fmt::format("failed writing {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path_);
}

void write_cells_csv(std::ostream& out, std::span<const AblationCell> cells) {
  size_t folds = 0;
  for (const auto& c : cells) folds = std::max(folds, c.fold_accs.size());
  out << "condition,fc_sizes,filters,filter_len";
  for (size_t f = 1; f <= folds; ++f) out << ",fold" << f;
  out << ",mean,ci95\n";
  for (const auto& c : cells) {
    out << fmt::format("{},{},{},{}", to_string(c.key.condition), join_sizes(c.key.fc_sizes, ";"),
                       c.key.filters, c.key.filter_len);
    for (size_t f = 0; f < folds; ++f) {
      out << ',';
      if (f < c.fold_accs.size()) out << fmt::format("{}", c.fold_accs[f]);
    }
    out << fmt::format(",{},{}\n", c.summary.mean, c.summary.half_width);
  }
}

std::vector<AblationCell> read_cells_csv(std::istream& in) {
  std::vector<AblationCell> cells;
  std::string line;
  if (!std::getline(in, line)) return cells;
  const auto header = split_csv(line);
  if (header.size() < 6 || header[0] != "condition") throw FormatError("results store header is malformed");
  const size_t folds = header.size() - 6;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() < header.size() - 1) throw FormatError(fmt::format("malformed results row '{}'", line));
    fields.resize(header.size());
    try {
      AblationCell cell;
      cell.key.condition = parse_feature_mode(fields[0]);
      cell.key.fc_sizes = parse_sizes(fields[1]);
      cell.key.filters = std::stoi(fields[2]);
      cell.key.filter_len = std::stoi(fields[3]);
      for (size_t f = 0; f < folds; ++f) {
        if (!fields[4 + f].empty()) cell.fold_accs.push_back(std::stod(fields[4 + f]));
      }
      cell.summary = {std::stod(fields[4 + folds]), std::stod(fields[5 + folds])};
      cells.push_back(std::move(cell));
    } catch (const std::logic_error&) {
      throw FormatError(fmt::format("malformed results row '{}'", line));
    }
  }
  return cells;
}

std::vector<AblationCell> ablation_run(std::span<const GridRow> grid, ResultsStore& store,
                                       const CellRunner& runner,
                                       const std::function<void(const AblationCell&, bool)>& progress) {
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  std::vector<AblationCell> out;
  for (const auto& key : grid_cells(grid)) {
    if (const auto* done = store.find(key)) {
      out.push_back(*done);
      if (progress) progress(*done, true);
      continue;
    }
    const CvResult cv = runner(key);
    AblationCell cell{key, cv.fold_accs, cv.summary};
    store.commit(cell);
    out.push_back(cell);
    if (progress) progress(cell, false);
  }
  return out;
}

CellRunner make_cv_runner(const std::map<FeatureMode, std::vector<nn::LabeledSample>>& datasets,
                          const nn::NetworkSpec& base, const CvConfig& config) {
  return [&datasets, base, config](const CellKey& key) {
    const auto it = datasets.find(key.condition);
    if (it == datasets.end() || it->second.empty()) {
      throw DataError(fmt::format("no {} features loaded", to_string(key.condition)));
    }
    nn::NetworkSpec spec = base;
    spec.channels = it->second.front().features.cols;
    spec.frames = it->second.front().features.rows;
    spec.fc_sizes = key.fc_sizes;
    spec.filters = key.filters;
    spec.filter_len = key.filter_len;
    return run_cv(it->second, spec, config);
  };
}

std::string format_ablation_table(std::span<const GridRow> grid, std::span<const AblationCell> cells) {
  auto lookup = [&](CellKey key, FeatureMode mode) -> const AblationCell* {
    key.condition = mode;
    for (const auto& c : cells) {
      if (c.key == key) return &c;
    }
    return nullptr;
  };
  auto label = [](const GridRow& row) {
    switch (row.axis) {
      case GridAxis::FilterLength: return fmt::format("{}x1", row.key.filter_len);
      case GridAxis::FilterCount: return std::to_string(row.key.filters);
      default: return join_sizes(row.key.fc_sizes, ", ");
    }
  };
  auto heading = [](GridAxis axis) {
    switch (axis) {
      case GridAxis::FilterLength: return "Filter size";
      case GridAxis::FilterCount: return "Number of filters";
      default: return "Number of neurons";
    }
  };

  std::string out = fmt::format("{:<20}{:<24}{:<24}\n", "", "Without head key points", "With head key points");
  for (size_t start = 0; start < grid.size();) {
    size_t end = start;
    while (end < grid.size() && grid[end].axis == grid[start].axis) ++end;
    out += fmt::format("{:<20}{}\n", heading(grid[start].axis), to_string(grid[start].axis));
    out += fmt::format("{:<20}{:<10}{:<14}{:<10}{:<14}\n", "", "Mean", "CI (95%)", "Mean", "CI (95%)");

    std::map<FeatureMode, double> best;
    for (size_t i = start; i < end; ++i) {
      for (auto mode : {FeatureMode::WithoutHead, FeatureMode::WithHead}) {
        if (const auto* c = lookup(grid[i].key, mode)) {
          auto [it, fresh] = best.try_emplace(mode, c->summary.mean);
          if (!fresh) it->second = std::max(it->second, c->summary.mean);
        }
      }
    }
    for (size_t i = start; i < end; ++i) {
      std::string line = fmt::format("{:<20}", label(grid[i]));
      for (auto mode : {FeatureMode::WithoutHead, FeatureMode::WithHead}) {
        const auto* c = lookup(grid[i].key, mode);
        if (!c) {
          line += fmt::format("{:<10}{:<14}", "-", "");
          continue;
        }
        const bool top = c->summary.mean == best[mode];
        line += fmt::format("{:<10}{:<14}", fmt::format("{:.4f}{}", c->summary.mean, top ? "*" : ""),
                            fmt::format("±{:.4f}", c->summary.half_width));
      }
      while (!line.empty() && line.back() == ' ') line.pop_back();
      out += line + "\n";
    }
    start = end;
  }
  return out;
}

}  // namespace gma::eval
