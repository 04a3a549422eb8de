#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace gma {

inline constexpr int kNumKeypoints = 25;
inline constexpr int kSnippetFps = 50;
inline constexpr int kSnippetFrames = 250;

/// One detected landmark. A missed detection is exactly (0, 0, 0).
struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double r = 0.0;

  bool missing() const { return x == 0.0 && y == 0.0 && r == 0.0; }
  friend bool operator==(const Keypoint&, const Keypoint&) = default;
};

/// Landmarks of one frame, addressed by the 1-based index used throughout
/// the toolkit (1-5 head, 6-21 body, 22-25 feet).
struct KeypointFrame {
  int index = 0;
  std::array<Keypoint, kNumKeypoints> points{};

  const Keypoint& at(int kp_index) const { return points.at(kp_index - 1); }
  Keypoint& at(int kp_index) { return points.at(kp_index - 1); }
  friend bool operator==(const KeypointFrame&, const KeypointFrame&) = default;
};

struct SnippetMeta {
  std::string snippet_id;
  int fps = kSnippetFps;
  int width = 1920;
  int height = 1080;
  friend bool operator==(const SnippetMeta&, const SnippetMeta&) = default;
};

struct SnippetKeypoints {
  SnippetMeta meta;
  std::vector<KeypointFrame> frames;  // exactly kSnippetFrames, index 1..250
  friend bool operator==(const SnippetKeypoints&, const SnippetKeypoints&) = default;
};

// Head landmarks live at fixed indices.
inline constexpr int kLeftEye = 1;
inline constexpr int kRightEye = 2;
inline constexpr int kNose = 3;
inline constexpr int kLeftEar = 4;
inline constexpr int kRightEar = 5;

enum class KeypointRole { LeftEye, RightEye, Nose, LeftEar, RightEar, Body, Excluded };

std::string_view to_string(KeypointRole role);
KeypointRole parse_role(std::string_view text);

/// Maps a pose estimator's landmark layout onto the 1..25 numbering.
///
/// Indices 1-5 must carry the roles eyL, eyR, ns, erL, erR in that order,
/// 6-21 are body points and 22-25 are excluded (toes/heels). The mapping
/// from external to internal indices is injective.
class SchemaMap {
 public:
  struct Entry {
    int kp_index = 0;
    int external_index = 0;
    KeypointRole role = KeypointRole::Body;
  };

  explicit SchemaMap(std::vector<Entry> entries);

  /// OpenPose BODY-25 layout.
  static SchemaMap body25();
  static SchemaMap from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;

  int external_index(int kp_index) const { return external_[kp_index - 1]; }
  KeypointRole role(int kp_index) const { return roles_[kp_index - 1]; }
  int external_count() const { return external_count_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::array<int, kNumKeypoints> external_{};
  std::array<KeypointRole, kNumKeypoints> roles_{};
  int external_count_ = 0;
};

enum class KeypointSelection { WithHead, WithoutHead, FaceMask };

/// WithHead -> 1..21, WithoutHead -> 6..21, FaceMask -> 1..5.
std::vector<int> select_keypoints(KeypointSelection mode);

/// Parses one pose-estimator frame document (`people[*].pose_keypoints_2d`).
/// With several people, the one with the highest mean reliability wins
/// (first listed on ties); with none, every point is the missing sentinel.
KeypointFrame parse_pose_frame(const nlohmann::json& document, const SchemaMap& schema,
                               int frame_index = 0);
/// Same, from raw document text.
KeypointFrame parse_pose_text(std::string_view document_text, const SchemaMap& schema,
                              int frame_index = 0);

/// Inverse of parse_pose_frame for a single person.
nlohmann::json write_pose_frame(const KeypointFrame& frame, const SchemaMap& schema);

struct PoseDocument {
  long long frame_number = 0;  // numeric index taken from the file name
  std::string text;
};

/// Sorts documents by frame number and re-indexes them 1..250.
SnippetKeypoints load_snippet(std::vector<PoseDocument> documents, const SchemaMap& schema,
                              const SnippetMeta& meta);

/// Reads every `*.json` in `dir` except the metadata sidecar. The frame
/// number is the last run of digits in the file name.
SnippetKeypoints load_snippet_dir(const std::filesystem::path& dir, const SchemaMap& schema,
                                  const SnippetMeta& meta);

/// Writes one document per frame as `<snippet_id>_%012d_keypoints.json`
/// (numbered from 0) plus `snippet.json`.
void write_snippet_dir(const SnippetKeypoints& snippet, const SchemaMap& schema,
                       const std::filesystem::path& dir);

SnippetMeta parse_snippet_meta(const nlohmann::json& doc);
nlohmann::json snippet_meta_json(const SnippetMeta& meta);
SnippetMeta read_snippet_meta(const std::filesystem::path& path);

inline constexpr const char* kSnippetMetaFile = "snippet.json";

}  // namespace gma
