#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gma/image.hpp"
#include "gma/keypoint_io.hpp"
#include "gma/rng.hpp"

namespace gma {

/// Face-mask constants. `width`/`height` are the full ellipse extents.
struct BlurParams {
  double width = 150.0;
  double height = 68.0;
  int kernel = 25;
  int noise_max = 25;
  double ema = 0.5;
  double reliability_threshold = 0.35;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
};

struct RawCenter {
  double cx = 0.0;
  double cy = 0.0;
  double r_avg = 0.0;
};

struct MaskCenter {
  int frame = 0;
  double cx = 0.0;
  double cy = 0.0;
  bool carried = false;
};

struct MaskTrajectory {
  std::string snippet_id;
  std::vector<MaskCenter> centers;
  BlurParams params;
};

/// cx averages all five head points, cy and the reliability only the eyes
/// and nose so that the mouth stays visible.
RawCenter raw_center(const KeypointFrame& frame);

/// Keeps a frame's raw center iff r_avg > threshold; otherwise repeats the
/// previous emitted center. Frames before the first accepted one are
/// backfilled from it.
std::vector<MaskCenter> gate_centers(std::span<const RawCenter> raw, double threshold);

/// c(f) <- a*c(f-1) + (1-a)*c(f) using the already smoothed predecessor.
std::vector<MaskCenter> ema_smooth(std::vector<MaskCenter> centers, double a);

/// Gate + EMA over a whole snippet.
MaskTrajectory compute_trajectory(const SnippetKeypoints& snippet, const BlurParams& params);

/// Pixels of an axis-aligned ellipse clipped to the frame, stored as one
/// [x_begin, x_end) span per covered row.
class EllipseRegion {
 public:
  struct Span {
    int y;
    int x_begin;
    int x_end;
  };

  EllipseRegion(double cx, double cy, double width, double height, int frame_width,
                int frame_height);

  /// Unclipped ellipse inequality.
  bool inside_ellipse(double x, double y) const;
  bool contains(int x, int y) const;
  const std::vector<Span>& spans() const { return spans_; }
  bool empty() const { return spans_.empty(); }
  size_t pixel_count() const;

 private:
  double cx_, cy_, semi_x_, semi_y_;
  int frame_width_, frame_height_;
  std::vector<Span> spans_;
};

EllipseRegion ellipse_region(const MaskCenter& center, const BlurParams& params, int frame_width,
                             int frame_height);

/// Replaces every in-region pixel by the rounded mean of its k x k
/// neighbourhood in the input frame (borders replicated).
FrameImage blur_region(const FrameImage& frame, const EllipseRegion& region, int kernel);
void blur_region_in_place(FrameImage& frame, const EllipseRegion& region, int kernel);

/// Per-frame noise substream keyed by (seed, snippet id, frame ordinal).
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, const std::string& snippet_id, int frame_index);
  /// Uniform integer in [0, noise_max].
  int draw(int noise_max);

 private:
  Rng rng_;
};

/// Adds an independent Uniform{0..noise_max} draw to every in-region channel,
/// saturating at 255. Draw order: rows top-down, x ascending, channels R,G,B.
FrameImage add_noise(const FrameImage& frame, const EllipseRegion& region, int noise_max,
                     NoiseStream& stream);
void add_noise_in_place(FrameImage& frame, const EllipseRegion& region, int noise_max,
                        NoiseStream& stream);

/// Blur + noise for one frame at a given mask center.
void mask_frame(FrameImage& frame, const MaskCenter& center, const BlurParams& params,
                const std::string& snippet_id);

struct BlurResult {
  std::vector<FrameImage> frames;
  MaskTrajectory trajectory;
};

/// Full pipeline. Frames are processed on up to `jobs` workers; output is
/// identical for any worker count.
BlurResult blur_snippet(std::vector<FrameImage> frames, const SnippetKeypoints& keypoints,
                        const BlurParams& params, int jobs = 1);

/// `frame,cx,cy,carried`
void write_trajectory_csv(std::ostream& out, const MaskTrajectory& trajectory);

}  // namespace gma
