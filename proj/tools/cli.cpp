#include "cli.hpp"

#include <csignal>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "config_file.hpp"
#include "gma/agreement.hpp"
#include "gma/blur.hpp"
#include "gma/errors.hpp"
#include "gma/evaluation.hpp"
#include "gma/features.hpp"
#include "gma/image.hpp"
#include "gma/keypoint_io.hpp"
#include "gma/neural.hpp"
#include "gma/parallel.hpp"
#include "gma/study.hpp"
#include "gma/study_http.hpp"
#include "gma/testkit.hpp"

namespace gma::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
};

// ---------------------------------------------------------------------------
// Manifest

std::vector<std::string> option_value(const CLI::Option& opt) {
  if (opt.get_items_expected_max() == 0) return {opt.count() > 0 ? "true" : "false"};
  if (opt.count() > 0) return opt.reduced_results();
  std::string d = opt.get_default_str();
  if (d.size() >= 2 && d.front() == '[' && d.back() == ']') d = d.substr(1, d.size() - 2);
  if (opt.get_items_expected_max() > 1) return CLI::detail::split(d, ',');
  return {d};
}

json options_json(const CLI::App& app) {
  json out = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    if (opt->get_lnames().empty()) continue;
    const auto& name = opt->get_lnames().front();
    if (name == "help" || name == "config" || name == "seed" || name == "jobs") continue;
    const auto v = option_value(*opt);
    if (opt->get_items_expected_max() > 1) {
      out[name] = v;
    } else if (!v.empty()) {
      out[name] = v.front();
    }
  }
  return out;
}

json versions() {
  return {{"gma", kVersion},
          {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
          {"fmt", FMT_VERSION},
          {"boost", BOOST_LIB_VERSION},
          {"nlohmann_json", fmt::format("{}.{}.{}", NLOHMANN_JSON_VERSION_MAJOR, NLOHMANN_JSON_VERSION_MINOR,
                                        NLOHMANN_JSON_VERSION_PATCH)}};
}

/// Effective configuration of the invoked subcommand chain, in the same
/// shape the config loader reads back.
json effective_config(const std::vector<const CLI::App*>& chain, const Globals& g) {
  json config = {{"seed", std::to_string(g.seed)}};
  json* node = &config;
  for (const auto* app : chain) {
    (*node)[app->get_name()] = options_json(*app);
    node = &(*node)[app->get_name()];
  }
  return config;
}

void write_manifest(const fs::path& path, const std::vector<const CLI::App*>& chain, const Globals& g) {
  const json config = effective_config(chain, g);
  std::vector<std::string> command;
  for (const auto* app : chain) command.push_back(app->get_name());
  const json manifest = {{"manifest_version", 1},
                         {"command", command},
                         {"config", config},
                         {"config_hash", fmt::format("{:016x}", fnv1a(config.dump()))},
                         {"seeds", {{"global", g.seed}}},
                         {"versions", versions()}};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
}

// ---------------------------------------------------------------------------
// File helpers

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw DataError(fmt::format("cannot write {}", path.string()));
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& path, const std::string& first_column) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = CLI::detail::split(line, ',');
    if (header) {
      header = false;
      if (!cells.empty() && cells[0] == first_column) continue;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

SchemaMap load_schema(const std::string& path) {
  if (path.empty()) return SchemaMap::body25();
  const json doc = json::parse(read_text(path), nullptr, false);
  if (doc.is_discarded()) throw InvalidSchema(fmt::format("{} is not valid JSON", path));
  return SchemaMap::from_json(doc);
}

SnippetKeypoints load_keypoints(const fs::path& dir, const SchemaMap& schema) {
  SnippetMeta meta;
  meta.snippet_id = dir.filename().string();
  if (fs::exists(dir / kSnippetMetaFile)) meta = read_snippet_meta(dir / kSnippetMetaFile);
  return load_snippet_dir(dir, schema, meta);
}

int parse_label(const std::string& text) {
  if (text == "FM+" || text == "1") return 1;
  if (text == "FM-" || text == "0") return 0;
  throw DataError(fmt::format("unknown class label '{}'", text));
}

using LabelList = std::vector<std::pair<std::string, int>>;

LabelList read_class_labels(const fs::path& path) {
  LabelList out;
  for (const auto& row : read_csv_rows(path, "snippet_id")) {
    if (row.size() < 2) throw DataError(fmt::format("{}: expected snippet_id,label", path.string()));
    out.emplace_back(row[0], parse_label(row[1]));
  }
  return out;
}

void write_class_labels(const fs::path& path, const LabelList& labels) {
  std::string text = "snippet_id,label\n";
  for (const auto& [id, label] : labels) text += fmt::format("{},{}\n", id, label ? "FM+" : "FM-");
  write_text(path, text);
}

/// A feature directory holds labels.csv and one <snippet_id>.gmaf per row.
std::vector<nn::LabeledSample> load_dataset(const fs::path& dir, int jobs) {
  const auto labels = read_class_labels(dir / "labels.csv");
  if (labels.empty()) throw DataError(fmt::format("{} lists no samples", (dir / "labels.csv").string()));
  std::vector<nn::LabeledSample> out(labels.size());
  parallel_for(labels.size(), jobs, [&](size_t i) {
    const auto path = dir / (labels[i].first + ".gmaf");
    if (!fs::exists(path)) throw DataError(fmt::format("missing feature file {}", path.string()));
    out[i] = {load_feature_matrix(path), labels[i].second};
  });
  return out;
}

std::string mode_dir(FeatureMode mode) { return std::string(to_string(mode)); }

// ---------------------------------------------------------------------------
// Shared option groups

struct NetOptions {
  nn::NetworkSpec spec;
  nn::TrainConfig train;

  void add(CLI::App* app) {
    app->add_option("--filters", spec.filters, "convolution filters");
    app->add_option("--filter-len", spec.filter_len, "convolution filter length in frames");
    app->add_option("--fc", spec.fc_sizes, "fully connected layer sizes, comma separated")
        ->delimiter(',')
        ->expected(1, 2)
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    app->add_option("--dropout", spec.dropout, "dropout rate before the second dense layer");
    app->add_option("--lr", train.learning_rate, "Adam learning rate");
    app->add_option("--batch-size", train.batch_size, "minibatch size");
    app->add_option("--val-fraction", train.validation_fraction, "share of training data held out for validation");
    app->add_option("--patience", train.patience, "epochs without improvement before stopping");
    app->add_option("--max-epochs", train.max_epochs, "epoch cap");
  }

  nn::NetworkSpec for_data(const std::vector<nn::LabeledSample>& data) const {
    auto s = spec;
    s.frames = data.front().features.rows;
    s.channels = data.front().features.cols;
    s.validate();
    return s;
  }
};

void write_cv_outputs(const fs::path& dir, const eval::CvResult& r) {
  std::string csv = "fold,test_size,selected_repeat,best_val_acc,test_acc\n";
  for (size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fo = r.folds[f];
    csv += fmt::format("{},{},{},{},{}\n", f + 1, fo.test.size(), fo.selected_repeat + 1,
                       fo.val_accs[fo.selected_repeat], fo.test_acc);
  }
  write_text(dir / "cv.csv", csv);
  write_text(dir / "summary.txt", eval::format_mean_ci(r.summary) + "\n");
}

void serve_until_signal(study::HttpServer& server) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.serve();
  if (waiter.joinable()) {
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Globals g;
  CLI::App app("General-movement pseudonymisation toolkit", "gma");
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.config_formatter(std::make_shared<FileConfig>());
  app.set_config("--config", "", "TOML or JSON option file; sections name subcommands, flags override it");
  app.add_option("--seed", g.seed, "global seed")->envname("GMA_BENCH_SEED");
  app.add_option("--jobs", g.jobs, "worker cap")->check(CLI::PositiveNumber);
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);

  // blur
  auto* blur = app.add_subcommand("blur", "face-blur one snippet");
  std::string b_keypoints, b_frames, b_out, schema_path;
  BlurParams bp;
  blur->add_option("--keypoints", b_keypoints, "directory of pose documents (+ snippet.json)")->required();
  blur->add_option("--frames", b_frames, "directory of frame_%06d.png")->required();
  blur->add_option("--out", b_out, "output directory")->required();
  blur->add_option("--schema", schema_path, "landmark schema JSON (default BODY-25)");
  blur->add_option("--width", bp.width, "ellipse width in px");
  blur->add_option("--height", bp.height, "ellipse height in px");
  blur->add_option("--kernel", bp.kernel, "box filter size");
  blur->add_option("--noise", bp.noise_max, "maximum additive noise per channel");
  blur->add_option("--ema", bp.ema, "smoothing weight of the previous center");
  blur->add_option("--threshold", bp.reliability_threshold, "minimum mean eye/nose reliability");

  // features
  auto* features = app.add_subcommand("features", "build feature matrices");
  std::string f_root, f_labels, f_out, f_mode = "both";
  bool f_csv = false;
  features->add_option("--keypoints", f_root, "snippet directory or directory of snippet directories")->required();
  features->add_option("--labels", f_labels, "snippet_id,label CSV copied into each dataset");
  features->add_option("--out", f_out, "output directory (one dataset per mode)")->required();
  features->add_option("--mode", f_mode, "with-head, without-head or both")
      ->check(CLI::IsMember({"with-head", "without-head", "both"}));
  features->add_option("--schema", schema_path, "landmark schema JSON (default BODY-25)");
  features->add_flag("--csv", f_csv, "also write <id>.csv");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string s_out;
  int s_n = 200, s_render = 0;
  bool s_no_features = false;
  testkit::SynthSpec sspec;
  synth->add_option("--out", s_out, "output directory")->required();
  synth->add_option("--n-per-class", s_n, "snippets per class")->check(CLI::NonNegativeNumber);
  synth->add_option("--amplitude", sspec.motion.amplitude_px, "class-1 oscillation amplitude in px");
  synth->add_option("--band-lo", sspec.motion.band_lo_hz, "oscillation band lower edge in Hz");
  synth->add_option("--band-hi", sspec.motion.band_hi_hz, "oscillation band upper edge in Hz");
  synth->add_option("--drift", sspec.motion.drift_px_s, "body drift in px/s");
  synth->add_option("--missing-rate", sspec.missing_rate, "share of missed detections");
  synth->add_option("--contamination-rate", sspec.contamination_rate, "share of frames with a second person");
  synth->add_option("--frame-width", sspec.width, "canvas width in px");
  synth->add_option("--frame-height", sspec.height, "canvas height in px");
  synth->add_option("--render", s_render, "render frames for the first N snippets")->check(CLI::NonNegativeNumber);
  synth->add_flag("--no-features", s_no_features, "skip feature datasets");

  // train / cv / ablate
  auto* train = app.add_subcommand("train", "train one network");
  std::string t_data, t_out;
  NetOptions t_net;
  train->add_option("--data", t_data, "feature dataset directory")->required();
  train->add_option("--out", t_out, "output directory")->required();
  t_net.add(train);

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation with repeat selection");
  std::string c_data, c_out;
  NetOptions c_net;
  int c_folds = 5;
  size_t c_repeats = 10;
  cv->add_option("--data", c_data, "feature dataset directory")->required();
  cv->add_option("--out", c_out, "output directory")->required();
  cv->add_option("--folds", c_folds, "number of folds");
  cv->add_option("--repeats", c_repeats, "trainings per fold; best validation accuracy is kept");
  c_net.add(cv);

  auto* ablate = app.add_subcommand("ablate", "resumable architecture grid");
  std::string a_with, a_without, a_out, a_grid = "fc";
  NetOptions a_net;
  int a_folds = 5;
  size_t a_repeats = 10;
  ablate->add_option("--with-head", a_with, "dataset built with head keypoints")->required();
  ablate->add_option("--without-head", a_without, "dataset built without head keypoints")->required();
  ablate->add_option("--grid", a_grid, "fc or conv")->check(CLI::IsMember({"fc", "conv"}));
  ablate->add_option("--out", a_out, "output directory (results.csv is resumed)")->required();
  ablate->add_option("--folds", a_folds, "number of folds");
  ablate->add_option("--repeats", a_repeats, "trainings per fold");
  a_net.add(ablate);

  // kappa
  auto* kappa = app.add_subcommand("kappa", "agreement report from study labels");
  std::string k_labels, k_out;
  kappa->add_option("--labels", k_labels, "exported label CSV")->required();
  kappa->add_option("--out", k_out, "output directory")->required();

  // study
  auto* studycmd = app.add_subcommand("study", "plan or export a rating study");
  studycmd->require_subcommand(1);
  auto* plan = studycmd->add_subcommand("plan", "draw the subsets of a new study");
  std::string p_journal, p_pool, p_id = "study", p_condition = "face-blurred";
  int p_count = 3, p_size = 280;
  plan->add_option("--journal", p_journal, "journal file")->required();
  plan->add_option("--pool", p_pool, "snippet_id,media CSV")->required();
  plan->add_option("--study-id", p_id, "study identifier");
  plan->add_option("--subsets", p_count, "number of subsets");
  plan->add_option("--size", p_size, "snippets per subset");
  plan->add_option("--condition", p_condition, "face-visible or face-blurred");
  auto* exportcmd = studycmd->add_subcommand("export", "write the study's labels");
  std::string e_journal, e_id = "study", e_out;
  bool e_require = false;
  exportcmd->add_option("--journal", e_journal, "journal file")->required();
  exportcmd->add_option("--study-id", e_id, "study identifier");
  exportcmd->add_option("--out", e_out, "CSV path")->required();
  exportcmd->add_flag("--require-complete", e_require, "fail unless every session is finished");

  // serve
  auto* serve = app.add_subcommand("serve", "run the rating service");
  std::string v_journal, v_media = ".", v_host = "127.0.0.1";
  int v_port = 8080;
  serve->add_option("--journal", v_journal, "journal file")->required();
  serve->add_option("--media", v_media, "media root");
  serve->add_option("--host", v_host, "bind address");
  serve->add_option("--port", v_port, "TCP port (0 picks one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (blur->parsed()) {
      bp.seed = g.seed;
      bp.validate();
      const auto snippet = load_keypoints(b_keypoints, load_schema(schema_path));
      auto frames = read_png_sequence(b_frames, static_cast<int>(snippet.frames.size()));
      const auto result = blur_snippet(std::move(frames), snippet, bp, g.jobs);
      write_png_sequence(fs::path(b_out) / "frames", result.frames);
      std::ostringstream traj;
      write_trajectory_csv(traj, result.trajectory);
      write_text(fs::path(b_out) / "trajectory.csv", traj.str());
      write_manifest(fs::path(b_out) / "manifest.json", {blur}, g);
      out << fmt::format("blurred {} frames of {}\n", result.frames.size(), snippet.meta.snippet_id);
    } else if (features->parsed()) {
      const auto schema = load_schema(schema_path);
      std::vector<fs::path> dirs;
      if (fs::exists(fs::path(f_root) / kSnippetMetaFile)) {
        dirs.push_back(f_root);
      } else {
        if (!fs::is_directory(f_root)) throw DataError(fmt::format("not a directory: {}", f_root));
        for (const auto& e : fs::directory_iterator(f_root)) {
          if (e.is_directory()) dirs.push_back(e.path());
        }
        std::sort(dirs.begin(), dirs.end());
      }
      std::vector<FeatureMode> modes;
      if (f_mode != "without-head") modes.push_back(FeatureMode::WithHead);
      if (f_mode != "with-head") modes.push_back(FeatureMode::WithoutHead);
      parallel_for(dirs.size(), g.jobs, [&](size_t i) {
        const auto snippet = load_keypoints(dirs[i], schema);
        for (auto mode : modes) {
          const auto m = build_features(snippet, mode);
          const auto base = fs::path(f_out) / mode_dir(mode) / snippet.meta.snippet_id;
          fs::create_directories(base.parent_path());
          save_feature_matrix(base.string() + ".gmaf", m);
          if (f_csv) {
            std::ostringstream csv;
            write_feature_csv(csv, m);
            write_text(base.string() + ".csv", csv.str());
          }
        }
      });
      if (!f_labels.empty()) {
        const auto labels = read_class_labels(f_labels);
        for (auto mode : modes) write_class_labels(fs::path(f_out) / mode_dir(mode) / "labels.csv", labels);
      }
      write_manifest(fs::path(f_out) / "manifest.json", {features}, g);
      out << fmt::format("built features for {} snippets\n", dirs.size());
    } else if (synth->parsed()) {
      const fs::path root(s_out);
      const auto snippets = testkit::gen_snippets(s_n, g.seed, sspec, g.jobs);
      const auto schema = SchemaMap::body25();
      LabelList labels;
      for (const auto& s : snippets) labels.emplace_back(s.keypoints.meta.snippet_id, s.label);
      parallel_for(snippets.size(), g.jobs, [&](size_t i) {
        auto spec = sspec;
        spec.label = snippets[i].label;
        spec.seed = derive_seed(g.seed, i);
        const auto& meta = snippets[i].keypoints.meta;
        const auto dir = root / "keypoints" / meta.snippet_id;
        fs::create_directories(dir);
        for (const auto& doc : testkit::snippet_documents(snippets[i], spec, schema)) {
          write_text(dir / fmt::format("{}_{:012d}_keypoints.json", meta.snippet_id, doc.frame_number), doc.text);
        }
        write_text(dir / kSnippetMetaFile, snippet_meta_json(meta).dump(2) + "\n");
      });
      write_class_labels(root / "labels.csv", labels);
      if (!s_no_features) {
        for (auto mode : {FeatureMode::WithHead, FeatureMode::WithoutHead}) {
          const auto samples = testkit::to_samples(snippets, mode, g.jobs);
          const auto dir = root / "features" / mode_dir(mode);
          fs::create_directories(dir);
          for (size_t i = 0; i < samples.size(); ++i) {
            save_feature_matrix(dir / (labels[i].first + ".gmaf"), samples[i].features);
          }
          write_class_labels(dir / "labels.csv", labels);
        }
      }
      for (int i = 0; i < std::min<int>(s_render, static_cast<int>(snippets.size())); ++i) {
        const auto& kp = snippets[static_cast<size_t>(i)].keypoints;
        write_png_sequence(root / "frames" / kp.meta.snippet_id,
                           testkit::render_frames(kp, {.seed = g.seed}, g.jobs));
      }
      write_manifest(root / "manifest.json", {synth}, g);
      out << fmt::format("generated {} snippets\n", snippets.size());
    } else if (train->parsed()) {
      const auto data = load_dataset(t_data, g.jobs);
      const auto spec = t_net.for_data(data);
      auto cfg = t_net.train;
      cfg.seed = g.seed;
      const auto r = nn::train(data, spec, cfg);
      const fs::path dir(t_out);
      fs::create_directories(dir);
      nn::save_weights_file((dir / "model.gmaw").string(), spec, r.weights);
      std::ostringstream hist;
      nn::write_history_csv(hist, r.history);
      write_text(dir / "history.csv", hist.str());
      write_manifest(dir / "manifest.json", {train}, g);
      out << fmt::format("best validation accuracy {:.4f} at epoch {} of {}\n", r.best_val_acc, r.best_epoch,
                         r.history.size());
    } else if (cv->parsed()) {
      const auto data = load_dataset(c_data, g.jobs);
      eval::CvConfig cfg{c_folds, c_repeats, g.seed, g.jobs, c_net.train};
      const auto r = eval::run_cv(data, c_net.for_data(data), cfg);
      write_cv_outputs(c_out, r);
      write_manifest(fs::path(c_out) / "manifest.json", {cv}, g);
      out << fmt::format("{}\n", eval::format_mean_ci(r.summary));
    } else if (ablate->parsed()) {
      std::map<FeatureMode, std::vector<nn::LabeledSample>> sets;
      sets[FeatureMode::WithHead] = load_dataset(a_with, g.jobs);
      sets[FeatureMode::WithoutHead] = load_dataset(a_without, g.jobs);
      auto base = a_net.spec;
      base.frames = sets[FeatureMode::WithHead].front().features.rows;
      const auto grid = eval::grid_by_name(a_grid);
      fs::create_directories(a_out);
      eval::ResultsStore store(fs::path(a_out) / "results.csv");
      const auto cells = eval::ablation_run(
          grid, store, eval::make_cv_runner(sets, base, {a_folds, a_repeats, g.seed, g.jobs, a_net.train}),
          [&](const eval::AblationCell& c, bool cached) {
            out << fmt::format("{} {} {}\n", cached ? "cached" : "done  ", c.key.id(),
                               eval::format_mean_ci(c.summary));
            out.flush();
          });
      const auto table = eval::format_ablation_table(grid, cells);
      write_text(fs::path(a_out) / "table.txt", table);
      write_manifest(fs::path(a_out) / "manifest.json", {ablate}, g);
      out << table;
    } else if (kappa->parsed()) {
      std::istringstream in(read_text(k_labels));
      const auto report = agree::agreement_report(agree::read_labels_csv(in));
      const auto text = agree::format_report(report);
      std::ostringstream csv;
      agree::write_report_csv(csv, report);
      write_text(fs::path(k_out) / "report.txt", text);
      write_text(fs::path(k_out) / "report.csv", csv.str());
      write_manifest(fs::path(k_out) / "manifest.json", {kappa}, g);
      out << text;
    } else if (plan->parsed()) {
      study::PlanRequest req;
      req.study_id = p_id;
      for (const auto& row : read_csv_rows(p_pool, "snippet_id")) {
        req.pool.push_back({row.at(0), row.size() > 1 ? row[1] : ""});
      }
      req.count = p_count;
      req.size = p_size;
      req.seed = g.seed;
      req.condition = agree::parse_condition(p_condition);
      study::StudyService service({p_journal, true, study::utc_now});
      const auto planned = service.create_study(req);
      write_manifest(p_journal + ".manifest.json", {studycmd, plan}, g);
      out << fmt::format("study {}: {} subsets of {} from a pool of {}\n", planned.study_id, planned.count,
                         planned.size, planned.pool.size());
    } else if (exportcmd->parsed()) {
      if (!fs::exists(e_journal)) throw DataError(fmt::format("no journal at {}", e_journal));
      study::StudyService service({e_journal, true, study::utc_now});
      const auto ex = service.export_labels(e_id);
      if (e_require && !ex.complete) throw DataError(fmt::format("study {} is not complete", e_id));
      write_text(e_out, ex.csv);
      write_manifest(e_out + ".manifest.json", {studycmd, exportcmd}, g);
      out << fmt::format("exported {} labels ({})\n", ex.rows, ex.complete ? "complete" : "incomplete");
    } else if (serve->parsed()) {
      study::StudyService service({v_journal, true, study::utc_now});
      study::HttpServer server(service, v_media);
      const int port = server.bind(v_host, v_port);
      if (port < 0) throw ConfigError(fmt::format("cannot bind {}:{}", v_host, v_port));
      out << fmt::format("listening on http://{}:{}\n", v_host, port);
      out.flush();
      serve_until_signal(server);
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "gma: configuration error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    err << "gma: data error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "gma: data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "gma: internal error: " << e.what() << '\n';
    return 3;
  }
}

}  // namespace gma::cli
