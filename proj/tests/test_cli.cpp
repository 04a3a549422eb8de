#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "doctest.h"
#include "gma/agreement.hpp"
#include "gma/rng.hpp"
#include "gma/testkit.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome gma_run(std::vector<std::string> args) {
  args.insert(args.begin(), "gma");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = gma::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "gma_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, std::uint64_t> tree_hashes(const fs::path& root) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = gma::fnv1a(slurp(e.path()));
  }
  return out;
}

json manifest(const fs::path& p) { return json::parse(slurp(p)); }

// Small synthetic corpus shared by several cases.
const fs::path& corpus() {
  static const fs::path dir = [] {
    auto d = scratch("corpus");
    const auto r = gma_run({"--seed", "5", "synth", "--out", d.string(), "--n-per-class", "8", "--frame-width", "320",
                            "--frame-height", "240", "--render", "1", "--missing-rate", "0.05"});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("help documents numeric defaults") {
  const auto top = gma_run({"--help"});
  CHECK(top.code == 0);
  for (const char* sub : {"blur", "features", "train", "cv", "ablate", "kappa", "study", "serve", "synth"}) {
    CHECK(top.out.find(sub) != std::string::npos);
  }
  const auto blur = gma_run({"blur", "--help"});
  CHECK(blur.code == 0);
  for (const char* d : {"[150]", "[68]", "[25]", "[0.5]", "[0.35]"}) CHECK(blur.out.find(d) != std::string::npos);
  const auto cv = gma_run({"cv", "--help"});
  for (const char* d : {"[5]", "[10]", "[64]", "[7]", "[200,100]", "[0.001]", "[32]", "[500]"}) {
    CAPTURE(d);
    CHECK(cv.out.find(d) != std::string::npos);
  }
  CHECK(gma_run({"study", "plan", "--help"}).out.find("[280]") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
  const auto unknown = gma_run({"cv", "--data", "x", "--out", "y", "--no-such-flag"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("Usage:") != std::string::npos);
  CHECK(gma_run({}).code == 1);
  CHECK(gma_run({"frobnicate"}).code == 1);
  // Parameter invariants are configuration errors too.
  const auto even = gma_run({"blur", "--keypoints", "k", "--frames", "f", "--out", "o", "--kernel", "4"});
  CHECK(even.code == 1);
  CHECK(even.err.find("configuration error") != std::string::npos);
}

TEST_CASE("missing inputs exit 2") {
  const auto dir = scratch("missing");
  const auto r = gma_run({"cv", "--data", (dir / "nope").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("data error") != std::string::npos);
  CHECK(gma_run({"kappa", "--labels", (dir / "none.csv").string(), "--out", dir.string()}).code == 2);
}

TEST_CASE("synth output reproduces from its manifest") {
  const auto& dir = corpus();
  CHECK(fs::exists(dir / "labels.csv"));
  CHECK(fs::exists(dir / "features" / "with-head" / "labels.csv"));
  CHECK(fs::exists(dir / "frames"));
  auto m = manifest(dir / "manifest.json");
  CHECK(m["config"]["seed"] == "5");
  CHECK(m["config"]["synth"]["n-per-class"] == "8");
  CHECK(m["versions"].contains("eigen"));

  const auto again = scratch("corpus_again");
  m["config"]["synth"]["out"] = again.string();
  {
    std::ofstream(again.parent_path() / "replay.json") << m.dump();
  }
  const auto r = gma_run({"--config", (again.parent_path() / "replay.json").string(), "synth"});
  REQUIRE(r.code == 0);
  auto a = tree_hashes(dir);
  auto b = tree_hashes(again);
  a.erase("manifest.json");
  b.erase("manifest.json");
  CHECK(a == b);
}

TEST_CASE("features from estimator documents match the generator") {
  const auto& dir = corpus();
  const auto out = scratch("features");
  const auto r = gma_run({"--jobs", "2", "features", "--keypoints", (dir / "keypoints").string(), "--labels",
                          (dir / "labels.csv").string(), "--out", out.string()});
  REQUIRE(r.code == 0);
  for (const char* mode : {"with-head", "without-head"}) {
    for (const auto& e : fs::directory_iterator(dir / "features" / mode)) {
      CHECK(slurp(e.path()) == slurp(out / mode / e.path().filename()));
    }
  }
}

TEST_CASE("blur twice gives byte-identical output") {
  const auto& dir = corpus();
  const auto frames_root = dir / "frames";
  const auto id = fs::directory_iterator(frames_root)->path().filename().string();
  const auto out = scratch("blur") / "O";
  std::vector<std::string> args{"--seed", "7", "blur", "--keypoints", (dir / "keypoints" / id).string(), "--frames",
                                (frames_root / id).string(), "--out", out.string(), "--width", "60", "--height", "30"};
  REQUIRE(gma_run(args).code == 0);
  const auto first = tree_hashes(out);
  CHECK(first.count("frames/frame_000250.png") == 1);
  CHECK(first.count("trajectory.csv") == 1);
  args.insert(args.begin(), {"--jobs", "3"});
  REQUIRE(gma_run(args).code == 0);
  CHECK(tree_hashes(out) == first);
}

TEST_CASE("cv from a TOML config; flags override the file") {
  const auto& dir = corpus();
  const auto work = scratch("cv");
  {
    std::ofstream toml(work / "c.toml");
    toml << "seed = 11\n\n[cv]\ndata = \"" << (dir / "features" / "without-head").string() << "\"\nout = \""
         << (work / "out").string() << "\"\nfolds = 3\nrepeats = 1\nmax_epochs = 2\nfc = [20]\nfilters = 8\n";
  }
  const auto r = gma_run({"--config", (work / "c.toml").string(), "cv", "--folds", "2"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("\xC2\xB1") != std::string::npos);
  const auto m = manifest(work / "out" / "manifest.json");
  CHECK(m["config"]["seed"] == "11");
  CHECK(m["config"]["cv"]["folds"] == "2");
  CHECK(m["config"]["cv"]["fc"] == json::array({"20"}));
  CHECK(m["config"]["cv"]["max-epochs"] == "2");
  std::istringstream csv(slurp(work / "out" / "cv.csv"));
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2);

  // JSON is read the same way.
  {
    std::ofstream js(work / "c.json");
    js << json{{"cv", {{"data", (dir / "features" / "without-head").string()},
                       {"out", (work / "out_json").string()},
                       {"folds", 2},
                       {"repeats", 1},
                       {"max_epochs", 2},
                       {"fc", {20}},
                       {"filters", 8}}},
               {"seed", 11}}
              .dump();
  }
  REQUIRE(gma_run({"--config", (work / "c.json").string(), "cv"}).code == 0);
  CHECK(slurp(work / "out_json" / "cv.csv") == slurp(work / "out" / "cv.csv"));

  std::ofstream(work / "bad.toml") << "[cv]\nno_such_option = 1\n";
  CHECK(gma_run({"--config", (work / "bad.toml").string(), "cv"}).code == 1);
}

TEST_CASE("seed falls back to GMA_BENCH_SEED") {
  const auto work = scratch("envseed");
  ::setenv("GMA_BENCH_SEED", "42", 1);
  REQUIRE(gma_run({"synth", "--out", (work / "a").string(), "--n-per-class", "1", "--no-features"}).code == 0);
  REQUIRE(gma_run({"--seed", "9", "synth", "--out", (work / "b").string(), "--n-per-class", "1", "--no-features"})
              .code == 0);
  ::unsetenv("GMA_BENCH_SEED");
  CHECK(manifest(work / "a" / "manifest.json")["seeds"]["global"] == 42);
  CHECK(manifest(work / "b" / "manifest.json")["seeds"]["global"] == 9);
}

TEST_CASE("train writes a loadable model") {
  const auto& dir = corpus();
  const auto out = scratch("train");
  const auto r = gma_run({"train", "--data", (dir / "features" / "with-head").string(), "--out", out.string(),
                          "--max-epochs", "2", "--fc", "16,8", "--filters", "4"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "model.gmaw"));
  CHECK(fs::exists(out / "history.csv"));
  CHECK(manifest(out / "manifest.json")["config"]["train"]["fc"] == json::array({"16", "8"}));
}

TEST_CASE("ablation resumes from its results file") {
  const auto& dir = corpus();
  const auto out = scratch("ablate");
  const std::vector<std::string> args{"ablate",      "--with-head", (dir / "features" / "with-head").string(),
                                      "--without-head", (dir / "features" / "without-head").string(),
                                      "--grid",      "conv",       "--out", out.string(), "--folds", "2",
                                      "--repeats",   "1",          "--max-epochs", "1"};
  const auto first = gma_run(args);
  REQUIRE(first.code == 0);
  const auto count = [](const std::string& text, const std::string& word) {
    size_t n = 0;
    for (auto pos = text.find(word); pos != std::string::npos; pos = text.find(word, pos + 1)) ++n;
    return n;
  };
  // The default 64x7 cell appears in both groups and is computed once.
  CHECK(count(first.out, "done") == 22);
  CHECK(count(first.out, "cached") == 2);
  const auto second = gma_run(args);
  REQUIRE(second.code == 0);
  CHECK(count(second.out, "done") == 0);
  CHECK(count(second.out, "cached") == 24);
  CHECK(second.out.find(slurp(out / "table.txt")) != std::string::npos);
}

TEST_CASE("study plan, export and kappa") {
  const auto work = scratch("study");
  {
    std::ofstream pool(work / "pool.csv");
    pool << "snippet_id,media\n";
    for (int i = 0; i < 40; ++i) pool << "s" << i << ",s" << i << ".mp4\n";
  }
  const auto journal = (work / "j.jsonl").string();
  REQUIRE(gma_run({"study", "plan", "--journal", journal, "--pool", (work / "pool.csv").string(), "--subsets", "2",
                   "--size", "10"})
              .code == 0);
  CHECK(fs::exists(journal + ".manifest.json"));
  CHECK(gma_run({"study", "plan", "--journal", journal, "--pool", (work / "pool.csv").string(), "--size", "30"})
            .code == 2);
  CHECK(gma_run({"study", "export", "--journal", journal, "--out", (work / "e.csv").string(), "--require-complete"})
            .code == 2);
  const auto ex = gma_run({"study", "export", "--journal", journal, "--out", (work / "e.csv").string()});
  CHECK(ex.code == 0);
  CHECK(slurp(work / "e.csv") == std::string(gma::agree::kLabelCsvHeader) + "\n");
  CHECK(gma_run({"study", "export", "--journal", journal, "--study-id", "zzz", "--out", (work / "z.csv").string()})
            .code == 2);

  const auto pair = gma::testkit::engineered_pair(200, 0.8, 0.5, 3);
  std::vector<gma::agree::LabelRecord> records;
  for (size_t i = 0; i < 200; ++i) {
    for (int who = 0; who < 2; ++who) {
      gma::agree::LabelRecord r;
      r.snippet_id = "s" + std::to_string(i);
      r.assessor = who ? "B" : "A";
      r.condition = gma::agree::Condition::FaceBlurred;
      r.subset = 1 + static_cast<int>(i / 100);
      r.label = {who ? pair.b[i] : pair.a[i], {}};
      r.timestamp = "2026-01-01T00:00:00Z";
      records.push_back(r);
    }
  }
  {
    std::ofstream labels(work / "labels.csv");
    gma::agree::write_labels_csv(labels, records);
  }
  const auto k = gma_run({"kappa", "--labels", (work / "labels.csv").string(), "--out", (work / "k").string()});
  REQUIRE(k.code == 0);
  CHECK(k.out.find(".80") != std::string::npos);
  CHECK(fs::exists(work / "k" / "report.csv"));
}
