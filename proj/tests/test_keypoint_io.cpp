#include <algorithm>
#include <filesystem>
#include <random>
#include <set>

#include <fmt/format.h>

#include "doctest.h"
#include "gma/errors.hpp"
#include "gma/keypoint_io.hpp"

using namespace gma;
using nlohmann::json;

namespace {

// Triplets in BODY-25 order: external index e gets (10e+1, 10e+2, 0.01*(e+1)).
json body25_document(int persons = 1, double reliability_scale = 1.0) {
  json people = json::array();
  for (int p = 0; p < persons; ++p) {
    std::vector<double> flat;
    for (int e = 0; e < 25; ++e) {
      flat.push_back(10.0 * e + 1 + 1000 * p);
      flat.push_back(10.0 * e + 2 + 1000 * p);
      flat.push_back(std::min(1.0, 0.01 * (e + 1) * reliability_scale * (p + 1)));
    }
    people.push_back({{"person_id", {-1}}, {"pose_keypoints_2d", flat}});
  }
  return {{"version", 1.3}, {"people", people}};
}

std::vector<PoseDocument> numbered_documents(int count) {
  std::vector<PoseDocument> docs;
  for (int i = 0; i < count; ++i) {
    json doc = body25_document();
    doc["people"][0]["pose_keypoints_2d"][0] = 5000 + i;  // tag: nose x
    docs.push_back({i, doc.dump()});
  }
  return docs;
}

}  // namespace

TEST_CASE("parse_pose_frame maps BODY-25 triplets field by field") {
  const auto schema = SchemaMap::body25();
  const auto frame = parse_pose_frame(body25_document(), schema, 7);
  CHECK(frame.index == 7);
  // Hand-authored expectations: toolkit index -> BODY-25 index.
  const std::pair<int, int> expected[] = {{1, 16}, {2, 15}, {3, 0},  {4, 18}, {5, 17},
                                          {6, 1},  {13, 8}, {19, 14}, {20, 21}, {21, 24},
                                          {22, 19}, {25, 23}};
  for (auto [idx, ext] : expected) {
    CAPTURE(idx);
    CHECK(frame.at(idx).x == 10.0 * ext + 1);
    CHECK(frame.at(idx).y == 10.0 * ext + 2);
    CHECK(frame.at(idx).r == doctest::Approx(0.01 * (ext + 1)));
  }
}

TEST_CASE("empty person list yields the all-missing frame") {
  const auto frame = parse_pose_text(R"({"people": []})", SchemaMap::body25());
  for (const auto& p : frame.points) CHECK(p.missing());
}

TEST_CASE("arity violations and bad JSON are MalformedDocument") {
  const auto schema = SchemaMap::body25();
  json doc = body25_document();
  auto& flat = doc["people"][0]["pose_keypoints_2d"];
  flat.erase(flat.end() - 3, flat.end());  // 24 triplets
  CHECK_THROWS_AS(parse_pose_frame(doc, schema), MalformedDocument);
  CHECK_THROWS_AS(parse_pose_text("{not json", schema), MalformedDocument);
  CHECK_THROWS_AS(parse_pose_text(R"({"persons": []})", schema), MalformedDocument);
  CHECK_THROWS_AS(parse_pose_text(R"({"people": [{"pose_keypoints_2d": "x"}]})", schema),
                  MalformedDocument);
  json bad_r = body25_document();
  bad_r["people"][0]["pose_keypoints_2d"][2] = 1.5;
  CHECK_THROWS_AS(parse_pose_frame(bad_r, schema), MalformedDocument);
}

TEST_CASE("multi-person documents pick the most reliable person, first on ties") {
  const auto schema = SchemaMap::body25();
  // Person 1 has doubled reliabilities.
  auto frame = parse_pose_frame(body25_document(2), schema);
  CHECK(frame.at(kNose).x == 1001.0);

  json tie = body25_document(1);
  json second = tie["people"][0];
  second["pose_keypoints_2d"][0] = 4242;
  tie["people"].push_back(second);
  frame = parse_pose_frame(tie, schema);
  CHECK(frame.at(kNose).x == 1.0);
}

TEST_CASE("load_snippet orders by frame number and validates count") {
  const auto schema = SchemaMap::body25();
  SnippetMeta meta{"s1"};
  auto sorted = load_snippet(numbered_documents(250), schema, meta);
  REQUIRE(sorted.frames.size() == 250);
  CHECK(sorted.frames.front().index == 1);
  CHECK(sorted.frames.back().index == 250);
  CHECK(sorted.frames[41].at(kNose).x == 5041.0);

  auto shuffled_docs = numbered_documents(250);
  std::mt19937 gen(3);
  std::shuffle(shuffled_docs.begin(), shuffled_docs.end(), gen);
  CHECK(load_snippet(shuffled_docs, schema, meta) == sorted);

  CHECK_THROWS_AS(load_snippet(numbered_documents(249), schema, meta), FrameCountMismatch);
  auto dup = numbered_documents(250);
  dup[10].frame_number = 11;
  CHECK_THROWS_AS(load_snippet(dup, schema, meta), FrameCountMismatch);
  auto broken = numbered_documents(250);
  broken[100].text = "[]";
  CHECK_THROWS_AS(load_snippet(broken, schema, meta), MalformedDocument);
}

TEST_CASE("select_keypoints subsets") {
  const auto with_head = select_keypoints(KeypointSelection::WithHead);
  const auto without = select_keypoints(KeypointSelection::WithoutHead);
  const auto face = select_keypoints(KeypointSelection::FaceMask);
  CHECK(with_head.size() == 21);
  CHECK(with_head.front() == 1);
  CHECK(with_head.back() == 21);
  CHECK(without.size() == 16);
  CHECK(without.front() == 6);
  CHECK(without.back() == 21);
  CHECK(face == std::vector<int>{1, 2, 3, 4, 5});

  std::set<int> joined(face.begin(), face.end());
  joined.insert(without.begin(), without.end());
  CHECK(joined.size() == face.size() + without.size());
  CHECK(std::vector<int>(joined.begin(), joined.end()) == with_head);
}

TEST_CASE("schema map validation") {
  const auto body25 = SchemaMap::body25();
  CHECK(SchemaMap::from_json(body25.to_json()).entries().size() == 25);

  auto entries = body25.entries();
  entries[7].external_index = entries[8].external_index;
  CHECK_THROWS_AS(SchemaMap{entries}, InvalidSchema);

  entries = body25.entries();
  std::swap(entries[0].role, entries[1].role);
  CHECK_THROWS_AS(SchemaMap{entries}, InvalidSchema);

  entries = body25.entries();
  entries.pop_back();
  CHECK_THROWS_AS(SchemaMap{entries}, InvalidSchema);

  json doc = body25.to_json();
  doc[24]["role"] = "body";  // index 25 must be excluded
  CHECK_THROWS_AS(SchemaMap::from_json(doc), InvalidSchema);
}

TEST_CASE("snippet directory round trip") {
  const auto schema = SchemaMap::body25();
  auto snippet = load_snippet(numbered_documents(250), schema, SnippetMeta{"dir-snippet"});
  const auto dir = std::filesystem::temp_directory_path() / "gma_test_snippet_dir";
  std::filesystem::remove_all(dir);
  write_snippet_dir(snippet, schema, dir);
  const auto meta = read_snippet_meta(dir / kSnippetMetaFile);
  CHECK(meta == snippet.meta);
  CHECK(load_snippet_dir(dir, schema, meta) == snippet);
  std::filesystem::remove_all(dir);
}

TEST_CASE("snippet metadata rejects other frame rates") {
  CHECK_THROWS_AS(parse_snippet_meta(json{{"snippet_id", "a"}, {"fps", 25}}), MalformedDocument);
  CHECK_THROWS_AS(parse_snippet_meta(json{{"fps", 50}}), MalformedDocument);
  const auto meta = parse_snippet_meta(json{{"snippet_id", "a"}});
  CHECK(meta.width == 1920);
  CHECK(meta.height == 1080);
}
