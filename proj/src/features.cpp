#include "gma/features.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "gma/binary_io.hpp"
#include "gma/errors.hpp"

namespace gma {

std::string_view to_string(FeatureMode mode) {
  return mode == FeatureMode::WithHead ? "with-head" : "without-head";
}

FeatureMode parse_feature_mode(std::string_view text) {
  if (text == "with-head" || text == "WithHead" || text == "with_head") return FeatureMode::WithHead;
  if (text == "without-head" || text == "WithoutHead" || text == "without_head") {
    return FeatureMode::WithoutHead;
  }
  throw ConfigError(fmt::format("unknown feature mode '{}' (with-head|without-head)", text));
}

KeypointSelection selection_for(FeatureMode mode) {
  return mode == FeatureMode::WithHead ? KeypointSelection::WithHead
                                       : KeypointSelection::WithoutHead;
}

InterpolatedSeries interpolate_missing(std::span<const double> series) {
  InterpolatedSeries out{std::vector<double>(series.begin(), series.end()), false};
  auto& v = out.values;
  const size_t n = v.size();
  size_t prev = n;  // last present sample
  for (size_t i = 0; i < n; ++i) {
    if (v[i] == 0.0) continue;
    if (prev == n) {
      std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(i), v[i]);
    } else if (i > prev + 1) {
      const double span = static_cast<double>(i - prev);
      for (size_t j = prev + 1; j < i; ++j) {
        const double t = static_cast<double>(j - prev) / span;
        v[j] = v[prev] + t * (v[i] - v[prev]);
      }
    }
    prev = i;
  }
  if (prev == n) {
    out.all_missing = n > 0;
  } else {
    std::fill(v.begin() + static_cast<std::ptrdiff_t>(prev) + 1, v.end(), v[prev]);
  }
  return out;
}

CoordinateMatrix minmax_normalize(CoordinateMatrix m) {
  for (int axis = 0; axis < 2; ++axis) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (int r = 0; r < m.rows; ++r) {
      for (int c = axis; c < m.cols; c += 2) {
        lo = std::min(lo, m.at(r, c));
        hi = std::max(hi, m.at(r, c));
      }
    }
    const double range = hi - lo;
    for (int r = 0; r < m.rows; ++r) {
      for (int c = axis; c < m.cols; c += 2) {
        m.at(r, c) = range > 0.0 ? (m.at(r, c) - lo) / range : 0.0;
      }
    }
  }
  return m;
}

CoordinateMatrix subtract_temporal_mean(CoordinateMatrix m) {
  for (int c = 0; c < m.cols; ++c) {
    double sum = 0.0;
    for (int r = 0; r < m.rows; ++r) sum += m.at(r, c);
    const double mean = m.rows > 0 ? sum / m.rows : 0.0;
    for (int r = 0; r < m.rows; ++r) m.at(r, c) -= mean;
  }
  return m;
}

CoordinateMatrix raw_coordinates(const SnippetKeypoints& snippet, FeatureMode mode) {
  const auto indices = select_keypoints(selection_for(mode));
  CoordinateMatrix m;
  m.rows = static_cast<int>(snippet.frames.size());
  m.cols = static_cast<int>(indices.size()) * 2;
  m.values.resize(static_cast<size_t>(m.rows) * m.cols);
  for (int r = 0; r < m.rows; ++r) {
    const auto& frame = snippet.frames[static_cast<size_t>(r)];
    for (size_t j = 0; j < indices.size(); ++j) {
      m.at(r, static_cast<int>(2 * j)) = frame.at(indices[j]).x;
      m.at(r, static_cast<int>(2 * j + 1)) = frame.at(indices[j]).y;
    }
  }
  return m;
}

FeatureMatrix build_features(const SnippetKeypoints& snippet, FeatureMode mode) {
  if (snippet.frames.size() != static_cast<size_t>(kSnippetFrames)) {
    throw FrameCountMismatch(fmt::format("snippet has {} frames", snippet.frames.size()));
  }
  CoordinateMatrix m = raw_coordinates(snippet, mode);
  int all_missing = 0;
  std::vector<double> column(static_cast<size_t>(m.rows));
  for (int c = 0; c < m.cols; ++c) {
    for (int r = 0; r < m.rows; ++r) column[static_cast<size_t>(r)] = m.at(r, c);
    auto filled = interpolate_missing(column);
    all_missing += filled.all_missing ? 1 : 0;
    for (int r = 0; r < m.rows; ++r) m.at(r, c) = filled.values[static_cast<size_t>(r)];
  }
  if (2 * all_missing > m.cols) {
    throw DegenerateSnippet(fmt::format("snippet '{}': {} of {} coordinate series are empty",
                                        snippet.meta.snippet_id, all_missing, m.cols));
  }
  m = subtract_temporal_mean(minmax_normalize(std::move(m)));

  FeatureMatrix out{m.rows, m.cols, mode, {}};
  out.values.reserve(m.values.size());
  std::transform(m.values.begin(), m.values.end(), std::back_inserter(out.values),
                 [](double v) { return static_cast<float>(v); });
  return out;
}

void write_feature_matrix(std::ostream& out, const FeatureMatrix& m) {
  std::string buf;
  binary::put_u32(buf, kFeatureMagic);
  binary::put_u32(buf, kFeatureVersion);
  binary::put_u32(buf, static_cast<std::uint32_t>(m.rows));
  binary::put_u32(buf, static_cast<std::uint32_t>(m.cols));
  binary::put_u32(buf, static_cast<std::uint32_t>(m.mode));
  for (float v : m.values) binary::put_f32(buf, v);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

FeatureMatrix read_feature_matrix(std::istream& in) {
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  binary::Reader reader(bytes);
  std::uint32_t magic = 0, version = 0, rows = 0, cols = 0, mode = 0;
  if (!reader.get(magic) || magic != kFeatureMagic) throw FormatError("not a feature matrix file");
  if (!reader.get(version) || version != kFeatureVersion) {
    throw VersionMismatch(fmt::format("feature file version {} unsupported", version));
  }
  if (!reader.get(rows) || !reader.get(cols) || !reader.get(mode) || mode > 1) {
    throw FormatError("truncated feature matrix header");
  }
  const size_t count = static_cast<size_t>(rows) * cols;
  if (reader.remaining() != count * sizeof(float)) {
    throw FormatError(fmt::format("feature payload has {} bytes, expected {}", reader.remaining(),
                                  count * sizeof(float)));
  }
  FeatureMatrix m{static_cast<int>(rows), static_cast<int>(cols), static_cast<FeatureMode>(mode), {}};
  m.values.resize(count);
  for (auto& v : m.values) reader.get(v);
  return m;
}

void save_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  write_feature_matrix(out, m);
  if (!out) throw DataError(fmt::format("failed writing {}", path.string()));
}

FeatureMatrix load_feature_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read {}", path.string()));
  return read_feature_matrix(in);
}

void write_feature_csv(std::ostream& out, const FeatureMatrix& m) {
  const int keypoints = m.cols / 2;
  const auto indices = select_keypoints(selection_for(m.mode));
  for (int j = 0; j < keypoints; ++j) {
    const int k = j < static_cast<int>(indices.size()) ? indices[static_cast<size_t>(j)] : j + 1;
    out << (j ? "," : "") << "x" << k << ",y" << k;
  }
  out << '\n';
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) out << (c ? "," : "") << fmt::format("{:.8g}", m.at(r, c));
    out << '\n';
  }
}

}  // namespace gma
