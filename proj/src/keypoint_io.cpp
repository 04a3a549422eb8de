#include "gma/keypoint_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gma/errors.hpp"

namespace gma {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(KeypointRole role) {
  switch (role) {
    case KeypointRole::LeftEye: return "eyL";
    case KeypointRole::RightEye: return "eyR";
    case KeypointRole::Nose: return "ns";
    case KeypointRole::LeftEar: return "erL";
    case KeypointRole::RightEar: return "erR";
    case KeypointRole::Body: return "body";
    case KeypointRole::Excluded: return "excluded";
  }
  return "body";
}

KeypointRole parse_role(std::string_view text) {
  static constexpr KeypointRole all[] = {KeypointRole::LeftEye, KeypointRole::RightEye,
                                         KeypointRole::Nose,    KeypointRole::LeftEar,
                                         KeypointRole::RightEar, KeypointRole::Body,
                                         KeypointRole::Excluded};
  for (auto role : all) {
    if (to_string(role) == text) return role;
  }
  throw InvalidSchema(fmt::format("unknown keypoint role '{}'", text));
}

namespace {

KeypointRole expected_role(int kp_index) {
  switch (kp_index) {
    case kLeftEye: return KeypointRole::LeftEye;
    case kRightEye: return KeypointRole::RightEye;
    case kNose: return KeypointRole::Nose;
    case kLeftEar: return KeypointRole::LeftEar;
    case kRightEar: return KeypointRole::RightEar;
    default: return kp_index <= 21 ? KeypointRole::Body : KeypointRole::Excluded;
  }
}

}  // namespace

SchemaMap::SchemaMap(std::vector<Entry> entries) : entries_(std::move(entries)) {
  if (entries_.size() != static_cast<size_t>(kNumKeypoints)) {
    throw InvalidSchema(fmt::format("schema needs {} entries, got {}", kNumKeypoints, entries_.size()));
  }
  std::array<bool, kNumKeypoints> seen{};
  std::set<int> externals;
  for (const auto& e : entries_) {
    if (e.kp_index < 1 || e.kp_index > kNumKeypoints) {
      throw InvalidSchema(fmt::format("keypoint index {} out of range", e.kp_index));
    }
    if (seen[e.kp_index - 1]) {
      throw InvalidSchema(fmt::format("keypoint index {} mapped twice", e.kp_index));
    }
    if (e.external_index < 0) {
      throw InvalidSchema(fmt::format("negative external index {}", e.external_index));
    }
    if (!externals.insert(e.external_index).second) {
      throw InvalidSchema(fmt::format("external index {} mapped twice", e.external_index));
    }
    if (e.role != expected_role(e.kp_index)) {
      throw InvalidSchema(fmt::format("keypoint index {} must have role '{}', got '{}'", e.kp_index,
                                      to_string(expected_role(e.kp_index)), to_string(e.role)));
    }
    seen[e.kp_index - 1] = true;
    external_[e.kp_index - 1] = e.external_index;
    roles_[e.kp_index - 1] = e.role;
    external_count_ = std::max(external_count_, e.external_index + 1);
  }
}

SchemaMap SchemaMap::body25() {
  // BODY-25: 0 nose, 1 neck, 2-4 right arm, 5-7 left arm, 8 mid hip,
  // 9-11 right leg, 12-14 left leg, 15/16 eyes, 17/18 ears, 19-24 feet.
  // Fourteen torso/limb points fill 6..19; two heels take 20/21 and the
  // four toe points form the excluded block.
  std::vector<Entry> e;
  e.push_back({kLeftEye, 16, KeypointRole::LeftEye});
  e.push_back({kRightEye, 15, KeypointRole::RightEye});
  e.push_back({kNose, 0, KeypointRole::Nose});
  e.push_back({kLeftEar, 18, KeypointRole::LeftEar});
  e.push_back({kRightEar, 17, KeypointRole::RightEar});
  for (int i = 0; i < 14; ++i) e.push_back({6 + i, 1 + i, KeypointRole::Body});
  e.push_back({20, 21, KeypointRole::Body});  // left heel
  e.push_back({21, 24, KeypointRole::Body});  // right heel
  e.push_back({22, 19, KeypointRole::Excluded});
  e.push_back({23, 20, KeypointRole::Excluded});
  e.push_back({24, 22, KeypointRole::Excluded});
  e.push_back({25, 23, KeypointRole::Excluded});
  return SchemaMap(std::move(e));
}

SchemaMap SchemaMap::from_json(const json& doc) {
  if (!doc.is_array()) throw InvalidSchema("schema map must be a JSON array");
  std::vector<Entry> entries;
  try {
    for (const auto& item : doc) {
      entries.push_back({item.at("paper_index").get<int>(), item.at("external_index").get<int>(),
                         parse_role(item.at("role").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw InvalidSchema(fmt::format("schema map: {}", e.what()));
  }
  return SchemaMap(std::move(entries));
}

json SchemaMap::to_json() const {
  json out = json::array();
  for (const auto& e : entries_) {
    out.push_back({{"paper_index", e.kp_index},
                   {"external_index", e.external_index},
                   {"role", std::string(to_string(e.role))}});
  }
  return out;
}

std::vector<int> select_keypoints(KeypointSelection mode) {
  auto range = [](int first, int last) {
    std::vector<int> v(static_cast<size_t>(last - first + 1));
    std::iota(v.begin(), v.end(), first);
    return v;
  };
  switch (mode) {
    case KeypointSelection::WithHead: return range(1, 21);
    case KeypointSelection::WithoutHead: return range(6, 21);
    case KeypointSelection::FaceMask: return range(1, 5);
  }
  return {};
}

namespace {

std::vector<double> read_person(const json& person, int expected_len) {
  const auto it = person.find("pose_keypoints_2d");
  if (it == person.end() || !it->is_array()) {
    throw MalformedDocument("person without a pose_keypoints_2d array");
  }
  if (static_cast<int>(it->size()) != expected_len) {
    throw MalformedDocument(fmt::format("pose_keypoints_2d has {} values, expected {}", it->size(),
                                        expected_len));
  }
  std::vector<double> values;
  values.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number()) throw MalformedDocument("non-numeric keypoint value");
    values.push_back(v.get<double>());
  }
  for (size_t i = 2; i < values.size(); i += 3) {
    if (!(values[i] >= 0.0 && values[i] <= 1.0)) {
      throw MalformedDocument(fmt::format("reliability {} outside [0,1]", values[i]));
    }
  }
  return values;
}

}  // namespace

KeypointFrame parse_pose_frame(const json& document, const SchemaMap& schema, int frame_index) {
  if (!document.is_object()) throw MalformedDocument("frame document is not a JSON object");
  const auto people = document.find("people");
  if (people == document.end() || !people->is_array()) {
    throw MalformedDocument("frame document has no 'people' array");
  }
  KeypointFrame frame;
  frame.index = frame_index;
  if (people->empty()) return frame;

  const int expected_len = 3 * std::max(schema.external_count(), kNumKeypoints);
  std::vector<double> best;
  double best_score = -1.0;
  for (const auto& person : *people) {
    auto values = read_person(person, expected_len);
    double score = 0.0;
    for (size_t i = 2; i < values.size(); i += 3) score += values[i];
    score /= static_cast<double>(values.size() / 3);
    if (score > best_score) {
      best_score = score;
      best = std::move(values);
    }
  }
  for (int p = 1; p <= kNumKeypoints; ++p) {
    const auto base = static_cast<size_t>(3 * schema.external_index(p));
    frame.at(p) = Keypoint{best[base], best[base + 1], best[base + 2]};
  }
  return frame;
}

KeypointFrame parse_pose_text(std::string_view document_text, const SchemaMap& schema,
                              int frame_index) {
  json doc = json::parse(document_text.begin(), document_text.end(), nullptr, false);
  if (doc.is_discarded()) throw MalformedDocument("frame document is not valid JSON");
  return parse_pose_frame(doc, schema, frame_index);
}

json write_pose_frame(const KeypointFrame& frame, const SchemaMap& schema) {
  std::vector<double> flat(static_cast<size_t>(3 * std::max(schema.external_count(), kNumKeypoints)),
                           0.0);
  for (int p = 1; p <= kNumKeypoints; ++p) {
    const auto base = static_cast<size_t>(3 * schema.external_index(p));
    flat[base] = frame.at(p).x;
    flat[base + 1] = frame.at(p).y;
    flat[base + 2] = frame.at(p).r;
  }
  return json{{"version", 1.3}, {"people", json::array({json{{"pose_keypoints_2d", flat}}})}};
}

SnippetKeypoints load_snippet(std::vector<PoseDocument> documents, const SchemaMap& schema,
                              const SnippetMeta& meta) {
  if (documents.size() != static_cast<size_t>(kSnippetFrames)) {
    throw FrameCountMismatch(
        fmt::format("snippet '{}' has {} frames, expected {}", meta.snippet_id, documents.size(),
                    kSnippetFrames));
  }
  std::stable_sort(documents.begin(), documents.end(),
                   [](const PoseDocument& a, const PoseDocument& b) {
                     return a.frame_number < b.frame_number;
                   });
  for (size_t i = 1; i < documents.size(); ++i) {
    if (documents[i].frame_number == documents[i - 1].frame_number) {
      throw FrameCountMismatch(
          fmt::format("duplicate frame number {}", documents[i].frame_number));
    }
  }
  SnippetKeypoints snippet;
  snippet.meta = meta;
  snippet.frames.reserve(documents.size());
  for (size_t i = 0; i < documents.size(); ++i) {
    snippet.frames.push_back(
        parse_pose_text(documents[i].text, schema, static_cast<int>(i) + 1));
  }
  return snippet;
}

namespace {

long long frame_number_from_name(const std::string& name) {
  auto end = name.find_last_of("0123456789");
  if (end == std::string::npos) {
    throw MalformedDocument(fmt::format("no frame number in file name '{}'", name));
  }
  auto begin = end;
  while (begin > 0 && std::isdigit(static_cast<unsigned char>(name[begin - 1]))) --begin;
  return std::stoll(name.substr(begin, end - begin + 1));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

SnippetKeypoints load_snippet_dir(const fs::path& dir, const SchemaMap& schema,
                                  const SnippetMeta& meta) {
  if (!fs::is_directory(dir)) throw DataError(fmt::format("not a directory: {}", dir.string()));
  std::vector<PoseDocument> docs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
    const auto name = entry.path().filename().string();
    if (name == kSnippetMetaFile) continue;
    docs.push_back({frame_number_from_name(entry.path().stem().string()), read_text(entry.path())});
  }
  return load_snippet(std::move(docs), schema, meta);
}

void write_snippet_dir(const SnippetKeypoints& snippet, const SchemaMap& schema,
                       const fs::path& dir) {
  fs::create_directories(dir);
  for (size_t i = 0; i < snippet.frames.size(); ++i) {
    std::ofstream out(dir / fmt::format("{}_{:012d}_keypoints.json", snippet.meta.snippet_id, i));
    out << write_pose_frame(snippet.frames[i], schema).dump();
    if (!out) throw DataError("failed writing pose document");
  }
  std::ofstream meta(dir / kSnippetMetaFile);
  meta << snippet_meta_json(snippet.meta).dump(2) << '\n';
}

SnippetMeta parse_snippet_meta(const json& doc) {
  SnippetMeta meta;
  try {
    meta.snippet_id = doc.at("snippet_id").get<std::string>();
    meta.fps = doc.value("fps", kSnippetFps);
    meta.width = doc.value("width", 1920);
    meta.height = doc.value("height", 1080);
  } catch (const json::exception& e) {
    throw MalformedDocument(fmt::format("snippet metadata: {}", e.what()));
  }
  if (meta.fps != kSnippetFps) {
    throw MalformedDocument(fmt::format("unsupported frame rate {}", meta.fps));
  }
  if (meta.width <= 0 || meta.height <= 0) throw MalformedDocument("non-positive frame size");
  return meta;
}

json snippet_meta_json(const SnippetMeta& meta) {
  return json{{"snippet_id", meta.snippet_id},
              {"fps", meta.fps},
              {"width", meta.width},
              {"height", meta.height}};
}

SnippetMeta read_snippet_meta(const fs::path& path) {
  json doc = json::parse(read_text(path), nullptr, false);
  if (doc.is_discarded()) throw MalformedDocument(fmt::format("{} is not valid JSON", path.string()));
  return parse_snippet_meta(doc);
}

}  // namespace gma
