#include "gma/testkit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "gma/errors.hpp"
#include "gma/parallel.hpp"

namespace gma::testkit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double round_to(double v, double step) { return std::round(v / step) * step; }

// Point whose motion a foot point copies.
int anchor_of(int index) {
  switch (index) {
    case 20: case 22: case 23: return 19;
    case 21: case 24: case 25: return 16;
    default: return index;
  }
}

struct Sinusoid {
  double amp, freq, phase;
};

double eval(const std::vector<Sinusoid>& parts, double t) {
  double v = 0.0;
  for (const auto& s : parts) v += s.amp * std::sin(kTwoPi * s.freq * t + s.phase);
  return v;
}

constexpr std::array<std::array<int, 2>, 19> kBones{{{6, 7}, {7, 8}, {8, 9}, {6, 10}, {10, 11}, {11, 12}, {6, 13},
                                                     {13, 14}, {14, 15}, {15, 16}, {13, 17}, {17, 18}, {18, 19},
                                                     {19, 20}, {16, 21}, {19, 22}, {19, 23}, {16, 24}, {16, 25}}};

FrameImage make_background(int width, int height, std::uint64_t seed) {
  FrameImage img(width, height);
  constexpr int cell = 16;
  const int cols = (width + cell - 1) / cell;
  std::vector<std::uint8_t> shade(static_cast<size_t>(cols) * ((height + cell - 1) / cell));
  Rng rng(derive_seed(seed, 0xBAC));
  for (auto& s : shade) s = static_cast<std::uint8_t>(98 + rng.below(25));
  for (int y = 0; y < height; ++y) {
    const auto* row = shade.data() + static_cast<size_t>(y / cell) * cols;
    auto* px = img.at(0, y);
    for (int x = 0; x < width; ++x, px += 3) px[0] = px[1] = px[2] = row[x / cell];
  }
  return img;
}

void paint_disk(FrameImage& img, double cx, double cy, int radius, const std::array<std::uint8_t, 3>& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - radius);
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx)) + radius);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - radius);
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy)) + radius);
  const double r2 = static_cast<double>(radius) * radius;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > r2) continue;
      std::copy(color.begin(), color.end(), img.at(x, y));
    }
  }
}

void paint_line(FrameImage& img, const Keypoint& a, const Keypoint& b, int radius) {
  static constexpr std::array<std::uint8_t, 3> kLimb{40, 170, 60};
  const double len = std::hypot(b.x - a.x, b.y - a.y);
  const int steps = static_cast<int>(std::ceil(len)) + 1;
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    paint_disk(img, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), radius, kLimb);
  }
}

void paint_face(FrameImage& img, const KeypointFrame& frame, const RenderOptions& o) {
  double sx = 0, sy = 0;
  int nx = 0, ny = 0;
  for (int i = kLeftEye; i <= kRightEar; ++i) {
    const auto& p = frame.at(i);
    if (p.missing()) continue;
    sx += p.x;
    ++nx;
    if (i <= kNose) {
      sy += p.y;
      ++ny;
    }
  }
  if (nx == 0 || ny == 0) return;
  const double cx = sx / nx;
  const double cy = sy / ny;
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - o.face_semi_x)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + o.face_semi_x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - o.face_semi_y)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + o.face_semi_y)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double u = (x - cx) / o.face_semi_x;
      const double v = (y - cy) / o.face_semi_y;
      if (u * u + v * v > 1.0) continue;
      const bool odd = (static_cast<int>(std::floor((x - cx) / 4.0)) + static_cast<int>(std::floor((y - cy) / 4.0))) & 1;
      auto* px = img.at(x, y);
      px[0] = odd ? 230 : 250;
      px[1] = odd ? 70 : 190;
      px[2] = odd ? 50 : 110;
    }
  }
}

void draw_figure(FrameImage& img, const KeypointFrame& frame, const RenderOptions& o) {
  for (const auto& [a, b] : kBones) {
    const auto& pa = frame.at(a);
    const auto& pb = frame.at(b);
    if (!pa.missing() && !pb.missing()) paint_line(img, pa, pb, o.line_radius);
  }
  paint_face(img, frame, o);
}

}  // namespace

Skeleton default_skeleton() {
  Skeleton s{};
  auto set = [&](int i, double x, double y) { s[static_cast<size_t>(i - 1)] = {x, y}; };
  set(1, 18, -330);
  set(2, -18, -330);
  set(3, 0, -312);
  set(4, 40, -322);
  set(5, -40, -322);
  set(6, 0, -250);
  set(7, -70, -235);
  set(8, -120, -150);
  set(9, -140, -70);
  set(10, 70, -235);
  set(11, 120, -150);
  set(12, 140, -70);
  set(13, 0, 0);
  set(14, -45, 0);
  set(15, -70, 120);
  set(16, -80, 230);
  set(17, 45, 0);
  set(18, 70, 120);
  set(19, 80, 230);
  set(20, 85, 245);
  set(21, -85, 245);
  set(22, 95, 268);
  set(23, 70, 266);
  set(24, -95, 268);
  set(25, -70, 266);
  return s;
}

void SynthSpec::validate() const {
  if (label != 0 && label != 1) throw ConfigError(fmt::format("label must be 0 or 1, got {}", label));
  if (!(missing_rate >= 0.0 && missing_rate <= 1.0)) throw ConfigError("missing_rate must lie in [0, 1]");
  if (!(contamination_rate >= 0.0 && contamination_rate <= 1.0))
    throw ConfigError("contamination_rate must lie in [0, 1]");
  const double nyquist = kSnippetFps / 2.0;
  if (!(motion.band_lo_hz > 0.0 && motion.band_lo_hz <= motion.band_hi_hz && motion.band_hi_hz < nyquist))
    throw ConfigError(fmt::format("oscillation band must lie in (0, {}) Hz", nyquist));
  if (motion.components < 1) throw ConfigError("components must be positive");
  if (motion.amplitude_px < 0 || motion.drift_px_s < 0 || motion.sway_px < 0 || motion.jitter_px < 0)
    throw ConfigError("motion magnitudes must be non-negative");
  if (width <= 0 || height <= 0 || !(scale > 0.0)) throw ConfigError("canvas and scale must be positive");
}

std::string SynthSpec::id() const {
  return snippet_id.empty() ? fmt::format("syn-{:016x}-c{}", seed, label) : snippet_id;
}

SynthSnippet gen_snippet(const SynthSpec& spec) {
  spec.validate();
  const auto& m = spec.motion;
  Rng layout(derive_seed(spec.seed, 1));
  Rng motion(derive_seed(spec.seed, 2));
  Rng jitter(derive_seed(spec.seed, 3));
  Rng missing(derive_seed(spec.seed, 4));
  Rng oscillation(derive_seed(spec.seed, 6));

  const double scale = spec.scale * spec.height / 1080.0 * layout.uniform(0.9, 1.1);
  const double ox = spec.width / 2.0 + layout.uniform(-1.0, 1.0) * spec.position_jitter * scale;
  const double oy = spec.height / 2.0 + 40.0 * scale + layout.uniform(-1.0, 1.0) * spec.position_jitter * scale;

  const double heading = motion.uniform(0.0, kTwoPi);
  const double vx = m.drift_px_s * std::cos(heading);
  const double vy = m.drift_px_s * std::sin(heading);
  std::array<std::array<std::vector<Sinusoid>, 2>, kNumKeypoints> sway;
  for (auto& point : sway) {
    for (auto& axis : point) axis = {{m.sway_px, motion.uniform(0.05, 0.4), motion.uniform(0.0, kTwoPi)}};
  }

  std::array<std::array<std::vector<Sinusoid>, 2>, kNumKeypoints> osc;
  if (spec.label == 1) {
    const double amp = m.amplitude_px / std::sqrt(static_cast<double>(m.components));
    for (int p : kOscillatingPoints) {
      for (auto& axis : osc[static_cast<size_t>(p - 1)]) {
        for (int k = 0; k < m.components; ++k) {
          axis.push_back({amp, oscillation.uniform(m.band_lo_hz, m.band_hi_hz), oscillation.uniform(0.0, kTwoPi)});
        }
      }
    }
  }

  SynthSnippet out;
  out.label = spec.label;
  out.keypoints.meta = {spec.id(), kSnippetFps, spec.width, spec.height};
  out.keypoints.frames.resize(kSnippetFrames);
  for (int f = 0; f < kSnippetFrames; ++f) {
    const double t = static_cast<double>(f) / kSnippetFps;
    auto& frame = out.keypoints.frames[static_cast<size_t>(f)];
    frame.index = f + 1;
    for (int i = 1; i <= kNumKeypoints; ++i) {
      const auto& base = spec.skeleton[static_cast<size_t>(i - 1)];
      const auto& o = osc[static_cast<size_t>(anchor_of(i) - 1)];
      const auto& s = sway[static_cast<size_t>(i - 1)];
      const double x = ox + base[0] * scale + vx * t + eval(s[0], t) + eval(o[0], t) + m.jitter_px * jitter.normal();
      const double y = oy + base[1] * scale + vy * t + eval(s[1], t) + eval(o[1], t) + m.jitter_px * jitter.normal();
      const double r = layout.uniform(0.6, 0.95);
      if (missing.uniform() < spec.missing_rate) {
        frame.at(i) = {};
      } else {
        frame.at(i) = {round_to(x, 1e-3), round_to(y, 1e-3), round_to(r, 1e-4)};
      }
    }
  }
  return out;
}

std::vector<PoseDocument> snippet_documents(const SynthSnippet& snippet, const SynthSpec& spec,
                                            const SchemaMap& schema) {
  Rng rng(derive_seed(spec.seed, 5));
  std::vector<PoseDocument> docs;
  docs.reserve(snippet.keypoints.frames.size());
  for (const auto& frame : snippet.keypoints.frames) {
    auto doc = write_pose_frame(frame, schema);
    if (rng.uniform() < spec.contamination_rate) {
      // A caregiver's hand: a few weak detections near the infant's wrist.
      std::vector<double> flat(static_cast<size_t>(schema.external_count()) * 3, 0.0);
      const auto& wrist = frame.at(kOscillatingPoints[rng.below(2)]);
      for (int j = 0; j < 6; ++j) {
        const auto k = static_cast<size_t>(rng.below(static_cast<std::uint64_t>(schema.external_count())));
        flat[3 * k] = round_to(wrist.x + rng.uniform(-60.0, 60.0), 1e-3);
        flat[3 * k + 1] = round_to(wrist.y + rng.uniform(-60.0, 60.0), 1e-3);
        flat[3 * k + 2] = round_to(rng.uniform(0.05, 0.25), 1e-4);
      }
      nlohmann::json other = {{"person_id", nlohmann::json::array({-1})}, {"pose_keypoints_2d", flat}};
      auto& people = doc["people"];
      if (rng.below(2) == 0) {
        people.insert(people.begin(), other);
      } else {
        people.push_back(other);
      }
    }
    docs.push_back({frame.index - 1, doc.dump()});
  }
  return docs;
}

std::vector<SynthSnippet> gen_snippets(int n_per_class, std::uint64_t seed, const SynthSpec& base, int jobs) {
  if (n_per_class < 0) throw ConfigError("n_per_class must be non-negative");
  std::vector<SynthSnippet> out(static_cast<size_t>(n_per_class) * 2);
  parallel_for(out.size(), jobs, [&](size_t i) {
    SynthSpec spec = base;
    spec.label = static_cast<int>(i % 2);
    spec.seed = derive_seed(seed, i);
    spec.snippet_id.clear();
    out[i] = gen_snippet(spec);
  });
  return out;
}

std::vector<nn::LabeledSample> to_samples(const std::vector<SynthSnippet>& snippets, FeatureMode mode, int jobs) {
  std::vector<nn::LabeledSample> out(snippets.size());
  parallel_for(out.size(), jobs, [&](size_t i) {
    out[i] = {build_features(snippets[i].keypoints, mode), snippets[i].label};
  });
  return out;
}

std::vector<nn::LabeledSample> gen_dataset(int n_per_class, std::uint64_t seed, FeatureMode mode,
                                           const SynthSpec& base, int jobs) {
  return to_samples(gen_snippets(n_per_class, seed, base, jobs), mode, jobs);
}

FrameImage render_frame(const KeypointFrame& frame, const SnippetMeta& meta, const RenderOptions& options) {
  FrameImage img = make_background(meta.width, meta.height, options.seed);
  draw_figure(img, frame, options);
  return img;
}

std::vector<FrameImage> render_frames(const SnippetKeypoints& snippet, const RenderOptions& options, int jobs) {
  const FrameImage background = make_background(snippet.meta.width, snippet.meta.height, options.seed);
  std::vector<FrameImage> out(snippet.frames.size());
  parallel_for(out.size(), jobs, [&](size_t i) {
    out[i] = background;
    draw_figure(out[i], snippet.frames[i], options);
  });
  return out;
}

std::array<double, 4> agreement_cells(double kappa, double prevalence) {
  if (!(prevalence > 0.0 && prevalence < 1.0)) throw ConfigError("prevalence must lie in (0, 1)");
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw ConfigError("engineered kappa must lie in [0, 1]");
  const double q = prevalence * (1.0 - prevalence);
  return {prevalence * prevalence + kappa * q, (1.0 - kappa) * q, (1.0 - kappa) * q,
          (1.0 - prevalence) * (1.0 - prevalence) + kappa * q};
}

std::array<long long, 4> engineered_counts(long long n, double kappa, double prevalence) {
  const auto p = agreement_cells(kappa, prevalence);
  const auto off = std::llround(static_cast<double>(n) * p[1]);
  const auto pp = std::min(n - 2 * off, std::llround(static_cast<double>(n) * p[0]));
  return {pp, off, off, n - pp - 2 * off};
}

EngineeredPair engineered_pair(size_t n, double kappa, double prevalence, std::uint64_t seed) {
  const auto c = engineered_counts(static_cast<long long>(n), kappa, prevalence);
  using agree::LabelValue;
  std::vector<std::pair<LabelValue, LabelValue>> cells;
  cells.reserve(n);
  const std::array<std::pair<LabelValue, LabelValue>, 4> kinds{{{LabelValue::FMplus, LabelValue::FMplus},
                                                                {LabelValue::FMplus, LabelValue::FMminus},
                                                                {LabelValue::FMminus, LabelValue::FMplus},
                                                                {LabelValue::FMminus, LabelValue::FMminus}}};
  for (size_t k = 0; k < 4; ++k) cells.insert(cells.end(), static_cast<size_t>(c[k]), kinds[k]);
  Rng rng(seed);
  rng.shuffle(std::span(cells));
  EngineeredPair out;
  for (const auto& [a, b] : cells) {
    out.a.push_back(a);
    out.b.push_back(b);
  }
  return out;
}

agree::ContingencyTable sample_table(Rng& rng, long long n, double kappa, double prevalence) {
  const auto p = agreement_cells(kappa, prevalence);
  agree::ContingencyTable t;
  for (long long i = 0; i < n; ++i) {
    double u = rng.uniform();
    size_t k = 0;
    while (k < 3 && u >= p[k]) u -= p[k++];
    ++t.counts[k / 2][k % 2];
  }
  return t;
}

}  // namespace gma::testkit
