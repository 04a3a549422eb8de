#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "gma/keypoint_io.hpp"

namespace gma {

enum class FeatureMode : std::uint32_t { WithHead = 0, WithoutHead = 1 };

std::string_view to_string(FeatureMode mode);
FeatureMode parse_feature_mode(std::string_view text);
KeypointSelection selection_for(FeatureMode mode);

/// Frames x (x_i, y_i) pairs in ascending keypoint index: column 2j is the
/// x coordinate of the j-th selected keypoint, column 2j+1 its y.
struct FeatureMatrix {
  int rows = 0;
  int cols = 0;
  FeatureMode mode = FeatureMode::WithHead;
  std::vector<float> values;  // row-major

  float at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

/// Dense double matrix used while preprocessing (row-major).
struct CoordinateMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
};

struct InterpolatedSeries {
  std::vector<double> values;
  bool all_missing = false;
};

/// Zeros mark missing samples. Interior gaps are filled linearly, leading
/// and trailing gaps take the nearest present value.
InterpolatedSeries interpolate_missing(std::span<const double> series);

/// Rescales even (x) columns by the joint x min/max and odd (y) columns by
/// the joint y min/max. A constant axis maps to zeros.
CoordinateMatrix minmax_normalize(CoordinateMatrix m);

/// Subtracts each column's mean over rows.
CoordinateMatrix subtract_temporal_mean(CoordinateMatrix m);

/// Raw interleaved coordinates of the keypoints selected by `mode`.
CoordinateMatrix raw_coordinates(const SnippetKeypoints& snippet, FeatureMode mode);

/// select -> interpolate -> min-max -> mean-subtract. Throws DegenerateSnippet
/// when more than half of the coordinate series are entirely missing.
FeatureMatrix build_features(const SnippetKeypoints& snippet, FeatureMode mode);

inline constexpr std::uint32_t kFeatureMagic = 0x46414D47;  // "GMAF"
inline constexpr std::uint32_t kFeatureVersion = 1;

/// Little-endian header {magic, version, rows, cols, mode} (u32 each)
/// followed by rows*cols float32 values.
void write_feature_matrix(std::ostream& out, const FeatureMatrix& m);
FeatureMatrix read_feature_matrix(std::istream& in);
void save_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix load_feature_matrix(const std::filesystem::path& path);
void write_feature_csv(std::ostream& out, const FeatureMatrix& m);

}  // namespace gma
