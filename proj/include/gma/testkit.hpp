#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gma/agreement.hpp"
#include "gma/features.hpp"
#include "gma/image.hpp"
#include "gma/keypoint_io.hpp"
#include "gma/neural.hpp"
#include "gma/rng.hpp"

namespace gma::testkit {

/// Skeleton offsets in pixels from the mid hip at unit scale, indexed 1..25.
using Skeleton = std::array<std::array<double, 2>, kNumKeypoints>;
Skeleton default_skeleton();

struct MotionParams {
  double band_lo_hz = 2.0;
  double band_hi_hz = 5.0;
  double amplitude_px = 5.0;
  int components = 4;
  double drift_px_s = 2.0;  // whole-body translation speed
  double sway_px = 3.0;     // per-point sub-0.5 Hz sway
  double jitter_px = 0.5;   // detector noise, both classes
};

struct SynthSpec {
  int label = 0;  // 1 = FM+, 0 = FM-
  std::uint64_t seed = 0;
  std::string snippet_id;  // generated from label and seed when empty
  int width = 1920;
  int height = 1080;
  Skeleton skeleton = default_skeleton();
  double scale = 1.0;           // multiplied by height/1080 and a per-snippet factor in [0.9, 1.1]
  double position_jitter = 80;  // max per-snippet offset of the body center, px at unit scale
  MotionParams motion;
  double missing_rate = 0.0;
  double contamination_rate = 0.0;

  /// Throws ConfigError.
  void validate() const;
  std::string id() const;
};

/// Wrists and ankles carry the class-1 oscillation; heels follow their ankle.
inline constexpr std::array<int, 4> kOscillatingPoints{9, 12, 16, 19};

struct SynthSnippet {
  SnippetKeypoints keypoints;
  int label = 0;
};

SynthSnippet gen_snippet(const SynthSpec& spec);

/// Per-frame estimator documents; with probability contamination_rate a
/// second, low-reliability person is added (in random order).
std::vector<PoseDocument> snippet_documents(const SynthSnippet& snippet, const SynthSpec& spec,
                                            const SchemaMap& schema);

/// Alternating labels 0,1,0,1,...; snippet i uses seed derive_seed(seed, i).
std::vector<SynthSnippet> gen_snippets(int n_per_class, std::uint64_t seed, const SynthSpec& base = {},
                                       int jobs = 1);
std::vector<nn::LabeledSample> to_samples(const std::vector<SynthSnippet>& snippets, FeatureMode mode,
                                          int jobs = 1);
std::vector<nn::LabeledSample> gen_dataset(int n_per_class, std::uint64_t seed, FeatureMode mode,
                                           const SynthSpec& base = {}, int jobs = 1);

struct RenderOptions {
  std::uint64_t seed = 0;
  double face_semi_x = 42.0;
  double face_semi_y = 24.0;
  int line_radius = 2;
};

/// Background texture, green stick figure, and a red/yellow textured face
/// ellipse centered on the head-keypoint center used by the blur mask.
FrameImage render_frame(const KeypointFrame& frame, const SnippetMeta& meta, const RenderOptions& options = {});
std::vector<FrameImage> render_frames(const SnippetKeypoints& snippet, const RenderOptions& options = {},
                                      int jobs = 1);

/// True for pixels painted by the face patch.
inline bool is_face_pixel(const std::uint8_t* rgb) { return rgb[0] - rgb[2] > 60; }

/// Cell probabilities {p11, p12, p21, p22} of two raters who share a
/// prevalence and agree beyond chance by exactly kappa.
std::array<double, 4> agreement_cells(double kappa, double prevalence);

/// Integer counts from agreement_cells, rounded so the table sums to n and
/// stays symmetric.
std::array<long long, 4> engineered_counts(long long n, double kappa, double prevalence);

struct EngineeredPair {
  std::vector<agree::LabelValue> a;
  std::vector<agree::LabelValue> b;
};

/// Shuffled label sequences realizing engineered_counts exactly.
EngineeredPair engineered_pair(size_t n, double kappa, double prevalence, std::uint64_t seed);

/// Multinomial table of n draws from agreement_cells.
agree::ContingencyTable sample_table(Rng& rng, long long n, double kappa, double prevalence);

}  // namespace gma::testkit
