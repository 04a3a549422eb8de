#include "gma/blur.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "gma/errors.hpp"
#include "gma/parallel.hpp"

namespace gma {

void BlurParams::validate() const {
  if (!(width > 0.0) || !(height > 0.0)) throw ConfigError("ellipse width and height must be > 0");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("box kernel must be odd and >= 1");
  if (!(ema >= 0.0 && ema < 1.0)) throw ConfigError("EMA coefficient must lie in [0,1)");
  if (noise_max < 0 || noise_max > 255) throw ConfigError("noise_max must lie in [0,255]");
  if (!(reliability_threshold >= 0.0 && reliability_threshold <= 1.0)) {
    throw ConfigError("reliability threshold must lie in [0,1]");
  }
}

RawCenter raw_center(const KeypointFrame& frame) {
  const auto& eyl = frame.at(kLeftEye);
  const auto& eyr = frame.at(kRightEye);
  const auto& ns = frame.at(kNose);
  const auto& erl = frame.at(kLeftEar);
  const auto& err = frame.at(kRightEar);
  return RawCenter{(eyl.x + eyr.x + ns.x + erl.x + err.x) / 5.0, (eyl.y + eyr.y + ns.y) / 3.0,
                   (eyl.r + eyr.r + ns.r) / 3.0};
}

std::vector<MaskCenter> gate_centers(std::span<const RawCenter> raw, double threshold) {
  const auto first = std::find_if(raw.begin(), raw.end(),
                                  [&](const RawCenter& c) { return c.r_avg > threshold; });
  if (first == raw.end()) {
    throw NoValidHeadDetection(
        fmt::format("no frame has mean eye/nose reliability above {}", threshold));
  }
  std::vector<MaskCenter> out(raw.size());
  double cx = first->cx;
  double cy = first->cy;
  for (size_t f = 0; f < raw.size(); ++f) {
    const bool accepted = raw[f].r_avg > threshold;
    if (accepted) {
      cx = raw[f].cx;
      cy = raw[f].cy;
    }
    out[f] = MaskCenter{static_cast<int>(f) + 1, cx, cy, !accepted};
  }
  return out;
}

std::vector<MaskCenter> ema_smooth(std::vector<MaskCenter> centers, double a) {
  for (size_t f = 1; f < centers.size(); ++f) {
    centers[f].cx = a * centers[f - 1].cx + (1.0 - a) * centers[f].cx;
    centers[f].cy = a * centers[f - 1].cy + (1.0 - a) * centers[f].cy;
  }
  return centers;
}

MaskTrajectory compute_trajectory(const SnippetKeypoints& snippet, const BlurParams& params) {
  params.validate();
  std::vector<RawCenter> raw;
  raw.reserve(snippet.frames.size());
  for (const auto& frame : snippet.frames) raw.push_back(raw_center(frame));
  return MaskTrajectory{snippet.meta.snippet_id,
                        ema_smooth(gate_centers(raw, params.reliability_threshold), params.ema),
                        params};
}

EllipseRegion::EllipseRegion(double cx, double cy, double width, double height, int frame_width,
                             int frame_height)
    : cx_(cx),
      cy_(cy),
      semi_x_(width / 2.0),
      semi_y_(height / 2.0),
      frame_width_(frame_width),
      frame_height_(frame_height) {
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - semi_y_)));
  const int y1 = std::min(frame_height - 1, static_cast<int>(std::ceil(cy + semi_y_)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - semi_x_)));
  const int x1 = std::min(frame_width - 1, static_cast<int>(std::ceil(cx + semi_x_)));
  for (int y = y0; y <= y1; ++y) {
    int begin = -1;
    int end = -1;
    for (int x = x0; x <= x1; ++x) {
      if (inside_ellipse(x, y)) {
        if (begin < 0) begin = x;
        end = x + 1;
      }
    }
    if (begin >= 0) spans_.push_back({y, begin, end});
  }
}

bool EllipseRegion::inside_ellipse(double x, double y) const {
  const double dx = (x - cx_) / semi_x_;
  const double dy = (y - cy_) / semi_y_;
  return dx * dx + dy * dy <= 1.0;
}

bool EllipseRegion::contains(int x, int y) const {
  return x >= 0 && y >= 0 && x < frame_width_ && y < frame_height_ && inside_ellipse(x, y);
}

size_t EllipseRegion::pixel_count() const {
  size_t n = 0;
  for (const auto& s : spans_) n += static_cast<size_t>(s.x_end - s.x_begin);
  return n;
}

EllipseRegion ellipse_region(const MaskCenter& center, const BlurParams& params, int frame_width,
                             int frame_height) {
  return EllipseRegion(center.cx, center.cy, params.width, params.height, frame_width,
                       frame_height);
}

void blur_region_in_place(FrameImage& frame, const EllipseRegion& region, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("box kernel must be odd and >= 1");
  if (region.empty()) return;
  const int half = kernel / 2;

  int rx0 = frame.width, rx1 = 0;
  for (const auto& s : region.spans()) {
    rx0 = std::min(rx0, s.x_begin);
    rx1 = std::max(rx1, s.x_end - 1);
  }
  const int ry0 = region.spans().front().y;
  const int ry1 = region.spans().back().y;

  // Summed-area table over the region's bounding box grown by the kernel
  // radius, sampled with clamped (replicated) coordinates.
  const int bx0 = rx0 - half, by0 = ry0 - half;
  const int bw = rx1 - rx0 + kernel, bh = ry1 - ry0 + kernel;
  const size_t stride = static_cast<size_t>(bw + 1);
  std::vector<std::int64_t> sat(stride * static_cast<size_t>(bh + 1) * 3, 0);
  auto sat_at = [&](int x, int y, int c) -> std::int64_t& {
    return sat[(static_cast<size_t>(y) * stride + static_cast<size_t>(x)) * 3 + static_cast<size_t>(c)];
  };
  for (int j = 0; j < bh; ++j) {
    const int sy = std::clamp(by0 + j, 0, frame.height - 1);
    std::int64_t row[3] = {0, 0, 0};
    for (int i = 0; i < bw; ++i) {
      const int sx = std::clamp(bx0 + i, 0, frame.width - 1);
      const std::uint8_t* px = frame.at(sx, sy);
      for (int c = 0; c < 3; ++c) {
        row[c] += px[c];
        sat_at(i + 1, j + 1, c) = sat_at(i + 1, j, c) + row[c];
      }
    }
  }

  const std::int64_t area = static_cast<std::int64_t>(kernel) * kernel;
  for (const auto& s : region.spans()) {
    const int j0 = s.y - half - by0;
    const int j1 = j0 + kernel;
    for (int x = s.x_begin; x < s.x_end; ++x) {
      const int i0 = x - half - bx0;
      const int i1 = i0 + kernel;
      std::uint8_t* px = frame.at(x, s.y);
      for (int c = 0; c < 3; ++c) {
        const std::int64_t sum =
            sat_at(i1, j1, c) - sat_at(i0, j1, c) - sat_at(i1, j0, c) + sat_at(i0, j0, c);
        px[c] = static_cast<std::uint8_t>((sum + area / 2) / area);
      }
    }
  }
}

FrameImage blur_region(const FrameImage& frame, const EllipseRegion& region, int kernel) {
  FrameImage out = frame;
  blur_region_in_place(out, region, kernel);
  return out;
}

NoiseStream::NoiseStream(std::uint64_t seed, const std::string& snippet_id, int frame_index)
    : rng_(derive_seed(seed, fnv1a(snippet_id), static_cast<std::uint64_t>(frame_index))) {}

int NoiseStream::draw(int noise_max) {
  return static_cast<int>(rng_.below(static_cast<std::uint64_t>(noise_max) + 1));
}

void add_noise_in_place(FrameImage& frame, const EllipseRegion& region, int noise_max,
                        NoiseStream& stream) {
  if (noise_max <= 0) return;
  for (const auto& s : region.spans()) {
    for (int x = s.x_begin; x < s.x_end; ++x) {
      std::uint8_t* px = frame.at(x, s.y);
      for (int c = 0; c < 3; ++c) {
        px[c] = static_cast<std::uint8_t>(std::min(255, px[c] + stream.draw(noise_max)));
      }
    }
  }
}

FrameImage add_noise(const FrameImage& frame, const EllipseRegion& region, int noise_max,
                     NoiseStream& stream) {
  FrameImage out = frame;
  add_noise_in_place(out, region, noise_max, stream);
  return out;
}

void mask_frame(FrameImage& frame, const MaskCenter& center, const BlurParams& params,
                const std::string& snippet_id) {
  const auto region = ellipse_region(center, params, frame.width, frame.height);
  blur_region_in_place(frame, region, params.kernel);
  NoiseStream stream(params.seed, snippet_id, center.frame);
  add_noise_in_place(frame, region, params.noise_max, stream);
}

BlurResult blur_snippet(std::vector<FrameImage> frames, const SnippetKeypoints& keypoints,
                        const BlurParams& params, int jobs) {
  if (frames.size() != keypoints.frames.size()) {
    throw DimensionMismatch(fmt::format("{} frames but {} keypoint frames", frames.size(),
                                        keypoints.frames.size()));
  }
  for (const auto& f : frames) {
    if (!f.valid() || f.width != keypoints.meta.width || f.height != keypoints.meta.height) {
      throw DimensionMismatch(fmt::format("frame is {}x{}, snippet metadata says {}x{}", f.width,
                                          f.height, keypoints.meta.width, keypoints.meta.height));
    }
  }
  BlurResult result{std::move(frames), compute_trajectory(keypoints, params)};

  const auto& centers = result.trajectory.centers;
  const auto& id = keypoints.meta.snippet_id;
  parallel_for(result.frames.size(), jobs,
               [&](size_t i) { mask_frame(result.frames[i], centers[i], params, id); });
  return result;
}

void write_trajectory_csv(std::ostream& out, const MaskTrajectory& trajectory) {
  out << "frame,cx,cy,carried\n";
  for (const auto& c : trajectory.centers) {
    out << fmt::format("{},{:.6f},{:.6f},{}\n", c.frame, c.cx, c.cy, c.carried ? 1 : 0);
  }
}

}  // namespace gma
