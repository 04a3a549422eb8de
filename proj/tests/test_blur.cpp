#include <cmath>
#include <sstream>

#include "blur_oracles.hpp"
#include "doctest.h"
#include "gma/blur.hpp"
#include "gma/errors.hpp"
#include "gma/rng.hpp"

using namespace gma;

namespace {

KeypointFrame head_frame(Keypoint eyl, Keypoint eyr, Keypoint ns, Keypoint erl, Keypoint err) {
  KeypointFrame f;
  f.at(kLeftEye) = eyl;
  f.at(kRightEye) = eyr;
  f.at(kNose) = ns;
  f.at(kLeftEar) = erl;
  f.at(kRightEar) = err;
  return f;
}

FrameImage random_image(int w, int h, Rng& rng) {
  FrameImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

SnippetKeypoints snippet_with_head(int w, int h, const std::vector<RawCenter>& centers) {
  SnippetKeypoints s;
  s.meta = SnippetMeta{"fixture", 50, w, h};
  for (size_t f = 0; f < centers.size(); ++f) {
    const auto& c = centers[f];
    // Eyes/nose symmetric around (cx, cy); ears on the same row.
    KeypointFrame frame = head_frame({c.cx - 10, c.cy - 5, c.r_avg}, {c.cx + 10, c.cy - 5, c.r_avg},
                                     {c.cx, c.cy + 10, c.r_avg}, {c.cx - 20, c.cy, 0.5},
                                     {c.cx + 20, c.cy, 0.5});
    frame.index = static_cast<int>(f) + 1;
    s.frames.push_back(frame);
  }
  return s;
}

}  // namespace

TEST_CASE("raw_center averages head coordinates") {
  auto c = raw_center(head_frame({900, 500, .9}, {1000, 500, .9}, {950, 560, .9}, {850, 520, .5},
                                 {1050, 520, .5}));
  CHECK(c.cx == doctest::Approx(950));
  CHECK(c.cy == doctest::Approx(520));
  CHECK(c.r_avg == doctest::Approx(0.9));

  c = raw_center(head_frame({100, 100, 1}, {100, 100, 1}, {100, 100, 1}, {100, 100, 1},
                            {100, 100, 1}));
  CHECK(c.cx == 100);
  CHECK(c.cy == 100);
  CHECK(c.r_avg == 1);

  c = raw_center(head_frame({0, 0, .4}, {0, 0, .4}, {0, 0, .2}, {}, {}));
  CHECK(c.r_avg == doctest::Approx(1.0 / 3.0));
  CHECK_FALSE(c.r_avg > 0.35);
}

TEST_CASE("gate_centers carries rejected frames and backfills the prefix") {
  std::vector<RawCenter> raw{{100, 10, .9}, {999, 999, .1}, {120, 12, .9}};
  auto g = gate_centers(raw, 0.35);
  REQUIRE(g.size() == 3);
  CHECK(g[0].cx == 100);
  CHECK(g[1].cx == 100);
  CHECK(g[1].cy == 10);
  CHECK(g[2].cx == 120);
  CHECK_FALSE(g[0].carried);
  CHECK(g[1].carried);
  CHECK_FALSE(g[2].carried);
  CHECK(g[2].frame == 3);

  std::vector<RawCenter> all_pass{{1, 2, .5}, {3, 4, .6}};
  g = gate_centers(all_pass, 0.35);
  CHECK(g[0].cx == 1);
  CHECK(g[1].cy == 4);
  CHECK_FALSE(g[0].carried);
  CHECK_FALSE(g[1].carried);

  std::vector<RawCenter> prefix{{5, 5, 0.0}, {80, 40, .9}};
  g = gate_centers(prefix, 0.35);
  CHECK(g[0].cx == 80);
  CHECK(g[0].carried);
  CHECK(g[1].cx == 80);

  // The gate is strict: exactly at the threshold is rejected.
  std::vector<RawCenter> boundary{{1, 1, 0.35}, {2, 2, 0.36}};
  CHECK(gate_centers(boundary, 0.35)[0].carried);

  std::vector<RawCenter> none{{1, 1, .1}, {2, 2, .2}};
  CHECK_THROWS_AS(gate_centers(none, 0.35), NoValidHeadDetection);
}

TEST_CASE("ema_smooth recurrence") {
  auto centers = [](std::vector<double> xs) {
    std::vector<MaskCenter> v;
    for (size_t i = 0; i < xs.size(); ++i) v.push_back({static_cast<int>(i) + 1, xs[i], xs[i], false});
    return v;
  };
  auto s = ema_smooth(centers({100, 200}), 0.5);
  CHECK(s[0].cx == 100);
  CHECK(s[1].cx == 150);
  s = ema_smooth(centers({0, 100, 100}), 0.5);
  CHECK(s[1].cx == 50);
  CHECK(s[2].cx == 75);
  CHECK(s[2].cy == 75);
  s = ema_smooth(centers({7, 7, 7, 7}), 0.5);
  for (const auto& c : s) CHECK(c.cx == 7);
}

TEST_CASE("gate + EMA match the single-pass reference on random sequences") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RawCenter> raw(250);
    for (auto& r : raw) r = {rng.uniform(0, 1920), rng.uniform(0, 1080), rng.uniform()};
    raw[rng.below(250)].r_avg = 0.9;
    const double a = rng.uniform(0, 0.99);
    const auto got = ema_smooth(gate_centers(raw, 0.35), a);
    const auto want = oracle::gated_smoothed(raw, 0.35, a);
    for (size_t f = 0; f < raw.size(); ++f) {
      REQUIRE(std::abs(got[f].cx - want[f].cx) <= 1e-9);
      REQUIRE(std::abs(got[f].cy - want[f].cy) <= 1e-9);
    }
  }
}

TEST_CASE("ellipse membership") {
  BlurParams p;
  MaskCenter c{1, 500, 400, false};
  auto region = ellipse_region(c, p, 1920, 1080);
  CHECK(region.contains(500, 400));
  CHECK(region.contains(575, 400));
  CHECK_FALSE(region.contains(576, 400));
  CHECK(region.contains(500, 434));
  CHECK_FALSE(region.contains(500, 435));
  CHECK(region.contains(425, 400));

  // Spans agree with the predicate over the bounding box.
  size_t counted = 0;
  for (int y = 300; y < 500; ++y) {
    for (int x = 400; x < 600; ++x) counted += region.contains(x, y) ? 1 : 0;
  }
  CHECK(counted == region.pixel_count());

  auto corner = ellipse_region({1, 0, 0, false}, p, 1920, 1080);
  for (const auto& s : corner.spans()) {
    CHECK(s.y >= 0);
    CHECK(s.x_begin >= 0);
  }
  CHECK(corner.contains(0, 0));
  CHECK(corner.contains(75, 0));
  CHECK(corner.pixel_count() < region.pixel_count() / 3);

  auto off = ellipse_region({1, -500, -500, false}, p, 1920, 1080);
  CHECK(off.empty());
}

TEST_CASE("blur_region matches the naive mean oracle") {
  Rng rng(5);
  for (int k : {1, 3, 25}) {
    for (int trial = 0; trial < 4; ++trial) {
      auto img = random_image(64, 64, rng);
      EllipseRegion region(rng.uniform(0, 63), rng.uniform(0, 63), rng.uniform(10, 90),
                           rng.uniform(10, 60), 64, 64);
      CHECK(blur_region(img, region, k) == oracle::naive_box_blur(img, region, k));
    }
  }
}

TEST_CASE("blur_region hand cases") {
  FrameImage flat(64, 64, 77);
  EllipseRegion everything(32, 32, 200, 200, 64, 64);
  CHECK(blur_region(flat, everything, 25) == flat);

  FrameImage spot(64, 64, 0);
  spot.at(32, 32)[0] = 255;
  auto out = blur_region(spot, EllipseRegion(32, 32, 10, 10, 64, 64), 25);
  CHECK(out.at(32, 32)[0] == 0);  // round(255/625)

  // 3x3 kernel: 255/9 = 28.33 -> 28
  out = blur_region(spot, EllipseRegion(32, 32, 2, 2, 64, 64), 3);
  CHECK(out.at(32, 32)[0] == 28);
  CHECK(out.at(31, 32)[0] == 28);
  CHECK(out.at(40, 40)[0] == 0);

  CHECK_THROWS_AS(blur_region(spot, everything, 4), ConfigError);
}

TEST_CASE("blurring does not raise in-region variance") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto img = random_image(64, 64, rng);
    EllipseRegion region(32, 32, 40, 30, 64, 64);
    auto out = blur_region(img, region, 5);
    for (int c = 0; c < 3; ++c) {
      auto variance = [&](const FrameImage& f) {
        double s = 0, s2 = 0;
        size_t n = 0;
        for (const auto& sp : region.spans()) {
          for (int x = sp.x_begin; x < sp.x_end; ++x) {
            const double v = f.at(x, sp.y)[c];
            s += v;
            s2 += v * v;
            ++n;
          }
        }
        return s2 / n - (s / n) * (s / n);
      };
      CHECK(variance(out) <= variance(img));
    }
  }
}

TEST_CASE("noise") {
  FrameImage img(32, 32, 240);
  EllipseRegion region(16, 16, 20, 20, 32, 32);
  NoiseStream zero(1, "a", 1);
  CHECK(add_noise(img, region, 0, zero) == img);

  NoiseStream s1(42, "snip", 3), s2(42, "snip", 3), other(42, "snip", 4);
  auto a = add_noise(img, region, 25, s1);
  auto b = add_noise(img, region, 25, s2);
  auto c = add_noise(img, region, 25, other);
  CHECK(a == b);
  CHECK_FALSE(a == c);

  int saturated = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const int v = a.at(x, y)[ch];
        if (!region.contains(x, y)) {
          CHECK(v == 240);
        } else {
          CHECK(v >= 240);
          CHECK(v <= 255);
          saturated += v == 255 ? 1 : 0;
        }
      }
    }
  }
  // draws 15..25 all clamp to 255: about 11/26 of the channels.
  CHECK(saturated > 0);

  // Draw range covers 0..noise_max.
  NoiseStream range(9, "r", 1);
  std::vector<int> seen(26, 0);
  for (int i = 0; i < 10000; ++i) seen[static_cast<size_t>(range.draw(25))]++;
  for (int v : seen) CHECK(v > 0);
}

TEST_CASE("blur_snippet: locality, gated frame position, determinism across workers") {
  const int w = 320, h = 180;
  std::vector<RawCenter> centers;
  for (int f = 0; f < 250; ++f) centers.push_back({150.0 + f * 0.1, 90.0, 0.9});
  centers[100].r_avg = 0.1;  // gated middle frame
  auto keypoints = snippet_with_head(w, h, centers);

  Rng rng(3);
  std::vector<FrameImage> frames;
  for (int f = 0; f < 250; ++f) frames.push_back(random_image(w, h, rng));

  BlurParams params;
  params.seed = 7;
  auto serial = blur_snippet(frames, keypoints, params, 1);
  auto parallel = blur_snippet(frames, keypoints, params, 4);
  CHECK(serial.frames == parallel.frames);

  // Trajectory hand trace around the gated frame: raw center of frame f
  // has cy = 90 + 10/3 - 10/3 = 90 (eyes -5, nose +10).
  const auto raw = [&](int f) { return raw_center(keypoints.frames[static_cast<size_t>(f)]); };
  CHECK(raw(0).cy == doctest::Approx(90.0));
  const auto& traj = serial.trajectory.centers;
  CHECK(traj[100].carried);
  const double expected = 0.5 * traj[99].cx + 0.5 * raw(99).cx;  // carried raw = previous raw
  CHECK(traj[100].cx == doctest::Approx(expected));

  for (size_t f = 0; f < 250; f += 17) {
    const auto region = ellipse_region(traj[f], params, w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (region.contains(x, y)) continue;
        const auto* a = serial.frames[f].at(x, y);
        const auto* b = frames[f].at(x, y);
        REQUIRE((a[0] == b[0] && a[1] == b[1] && a[2] == b[2]));
      }
    }
  }

  std::ostringstream csv;
  write_trajectory_csv(csv, serial.trajectory);
  CHECK(csv.str().rfind("frame,cx,cy,carried\n1,", 0) == 0);
  CHECK(csv.str().find("\n101,") != std::string::npos);

  std::vector<FrameImage> wrong(250, FrameImage(10, 10));
  CHECK_THROWS_AS(blur_snippet(wrong, keypoints, params), DimensionMismatch);
}

TEST_CASE("BlurParams validation") {
  BlurParams p;
  CHECK_NOTHROW(p.validate());
  p.kernel = 24;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.ema = 1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.noise_max = 256;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.width = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}
