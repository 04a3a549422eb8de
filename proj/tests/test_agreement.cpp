#include <cmath>
#include <sstream>

#include "doctest.h"
#include "gma/agreement.hpp"
#include "gma/errors.hpp"
#include "gma/rng.hpp"

using namespace gma;
using namespace gma::agree;

namespace {

ContingencyTable table(long long a, long long b, long long c, long long d) {
  ContingencyTable t;
  t.counts = {{{a, b}, {c, d}}};
  return t;
}

RatingLabel plus() { return {LabelValue::FMplus, {}}; }
RatingLabel minus() { return {LabelValue::FMminus, {}}; }
RatingLabel na(NaReason r = NaReason::Drowsy) { return {LabelValue::NotAssessable, r}; }

}  // namespace

TEST_CASE("kappa hand cases") {
  CHECK(std::abs(cohens_kappa(table(50, 0, 0, 50)) - 1.0) < 1e-12);
  CHECK(std::abs(cohens_kappa(table(25, 25, 25, 25)) - 0.0) < 1e-12);
  CHECK(std::abs(cohens_kappa(table(45, 5, 10, 40)) - 0.7) < 1e-12);
  CHECK(cohens_kappa(table(7, 0, 0, 0)) == 1.0);
  CHECK_THROWS_AS(cohens_kappa(table(0, 0, 0, 0)), DataError);
}

TEST_CASE("single-class raters") {
  // Opposite constant raters: p_e = 0, kappa = 0.
  CHECK(cohens_kappa(table(0, 10, 0, 0)) == doctest::Approx(0.0));
  // Same constant rater: p_e = 1 with perfect agreement.
  CHECK(cohens_kappa(table(0, 0, 0, 9)) == 1.0);
}

TEST_CASE("asymptotic interval") {
  const auto r = kappa_ci(table(45, 5, 10, 40));
  CHECK(r.se == doctest::Approx(std::sqrt(0.1275 / 25)).epsilon(1e-12));
  CHECK(r.se == doctest::Approx(0.0714).epsilon(1e-3));
  CHECK(r.lower == doctest::Approx(0.7 - 1.959963985 * r.se).epsilon(1e-9));
  CHECK(r.lower == doctest::Approx(0.560).epsilon(1e-3));
  CHECK(r.upper == doctest::Approx(0.840).epsilon(1e-3));
  CHECK(r.n == 100);

  const auto perfect = kappa_ci(table(50, 0, 0, 50));
  CHECK(perfect.se == 0.0);
  CHECK(perfect.lower == 1.0);
  CHECK(perfect.upper == 1.0);

  const auto tiny = kappa_ci(table(3, 0, 1, 2));
  CHECK(tiny.upper == 1.0);
  CHECK(tiny.lower <= tiny.kappa);
  CHECK(tiny.kappa <= tiny.upper);
}

TEST_CASE("kappa symmetry and bounds over random tables") {
  Rng rng(4);
  for (int trial = 0; trial < 2000; ++trial) {
    auto t = table(static_cast<long long>(rng.below(60)), static_cast<long long>(rng.below(60)),
                   static_cast<long long>(rng.below(60)), static_cast<long long>(rng.below(60)));
    if (t.n() == 0) continue;
    double k = 0;
    try {
      k = cohens_kappa(t);
    } catch (const DegenerateMarginals&) {
      continue;
    }
    CHECK(k <= 1.0 + 1e-12);
    CHECK(cohens_kappa(t.transposed()) == doctest::Approx(k).epsilon(1e-12));
    CHECK(cohens_kappa(t.relabeled()) == doctest::Approx(k).epsilon(1e-12));
    const bool off_zero = t.counts[0][1] == 0 && t.counts[1][0] == 0;
    CHECK((std::abs(k - 1.0) < 1e-12) == off_zero);
    if (t.n() >= 2) {
      const auto ci = kappa_ci(t);
      CHECK(ci.lower <= ci.kappa);
      CHECK(ci.kappa <= ci.upper);
      CHECK(ci.lower >= -1.0);
      CHECK(ci.upper <= 1.0);
    }
  }
}

TEST_CASE("bootstrap interval tracks the asymptotic one") {
  const auto t = table(120, 18, 22, 120);
  const auto asym = kappa_ci(t);
  const auto boot = kappa_bootstrap_ci(t, 10000, 7);
  CHECK(boot.kappa == asym.kappa);
  CHECK(std::abs(boot.lower - asym.lower) <= 0.02);
  CHECK(std::abs(boot.upper - asym.upper) <= 0.02);
  CHECK(kappa_bootstrap_ci(t, 500, 3).lower == kappa_bootstrap_ci(t, 500, 3).lower);
}

TEST_CASE("assessability filter") {
  LabelSet a{{"s1", plus()}, {"s2", plus()}, {"s3", minus()}, {"s4", plus()}};
  LabelSet b{{"s1", na()}, {"s2", minus()}, {"s3", minus()}, {"s9", plus()}};
  const auto pairs = filter_assessable(a, b);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].snippet_id == "s2");
  CHECK(pairs[0].a_plus);
  CHECK_FALSE(pairs[0].b_plus);
  CHECK(ContingencyTable::from_pairs(pairs) == table(0, 1, 0, 1));
  CHECK_THROWS_AS(filter_assessable(LabelSet{{"x", plus()}}, LabelSet{{"y", plus()}}), EmptyOverlap);
}

TEST_CASE("rating label rules") {
  CHECK_NOTHROW(na(NaReason::FussyCrying).validate());
  CHECK_THROWS_AS((RatingLabel{LabelValue::FMplus, NaReason::Yawning}.validate()), InvalidLabel);
  CHECK(parse_label_value("FM+") == LabelValue::FMplus);
  CHECK(parse_label_value("fmminus") == LabelValue::FMminus);
  CHECK(parse_label_value("NA") == LabelValue::NotAssessable);
  CHECK_THROWS_AS(parse_label_value("maybe"), InvalidLabel);
  CHECK(parse_na_reason("fussy/crying") == NaReason::FussyCrying);
  CHECK(to_string(NaReason::SelfSoothing) == "self-soothing");
}

TEST_CASE("label CSV round trip") {
  std::vector<LabelRecord> recs{
      {"s1", "assessor1", Condition::FaceBlurred, 1, plus(), "2026-01-01T10:00:00Z"},
      {"s2", "assessor1", Condition::FaceBlurred, 1, na(NaReason::FussyCrying), "2026-01-01T10:01:00Z"},
      {"s,3", "assessor2", Condition::FaceVisible, 2, minus(), ""},
  };
  std::stringstream ss;
  write_labels_csv(ss, recs);
  CHECK(ss.str().find("s2,assessor1,face-blurred,1,NA,fussy/crying,") != std::string::npos);
  CHECK(read_labels_csv(ss) == recs);

  std::stringstream bad_header("id,label\n");
  CHECK_THROWS_AS(read_labels_csv(bad_header), FormatError);
  std::stringstream bad_reason(std::string(kLabelCsvHeader) + "\ns1,a,face-blurred,1,FM+,drowsy,t\n");
  CHECK_THROWS_AS(read_labels_csv(bad_reason), InvalidLabel);
  std::stringstream bad_subset(std::string(kLabelCsvHeader) + "\ns1,a,face-blurred,x,FM+,,t\n");
  CHECK_THROWS_AS(read_labels_csv(bad_subset), FormatError);
}

TEST_CASE("agreement report layout") {
  std::vector<LabelRecord> recs;
  Rng rng(12);
  for (int s = 1; s <= 3; ++s) {
    for (int i = 0; i < 40; ++i) {
      const std::string id = "sn" + std::to_string(s * 100 + i);
      const bool truth = i % 2 == 0;
      for (const std::string who : {"A1", "A2"}) {
        for (auto c : {Condition::FaceVisible, Condition::FaceBlurred}) {
          RatingLabel l = truth ? plus() : minus();
          if (rng.uniform() < 0.1) l = truth ? minus() : plus();
          if (who == "A1" && c == Condition::FaceBlurred && i == 3) l = na(NaReason::Refluxing);
          recs.push_back({id, who, c, s, l, ""});
        }
      }
    }
  }
  const auto rep = agreement_report(recs);
  CHECK(rep.subsets == std::vector<int>{1, 2, 3});
  CHECK(rep.subset_sizes == std::vector<long long>{40, 40, 40, 120});
  REQUIRE(rep.intra.size() == 2);
  REQUIRE(rep.inter.size() == 2);
  CHECK(rep.intra[0].cells.size() == 4);
  CHECK(rep.intra[0].cells[3].result->n == 117);
  CHECK(rep.intra[1].cells[3].result->n == 120);
  CHECK(rep.not_assessable.at("A1").at(Condition::FaceBlurred) == 3);
  CHECK(rep.not_assessable.at("A2").at(Condition::FaceBlurred) == 0);

  const auto text = format_report(rep);
  CHECK(text.find("Subset 1") != std::string::npos);
  CHECK(text.find("Combined (120 snippets)") != std::string::npos);
  CHECK(text.find("A1: 0 face-visible, 3 face-blurred") != std::string::npos);
  std::ostringstream csv;
  write_report_csv(csv, rep);
  CHECK(csv.str().starts_with("kind,row,column,kappa,lower,upper,n\n"));
  CHECK(csv.str().find("intra,A1,combined,") != std::string::npos);
}

TEST_CASE("report marks empty cells instead of failing") {
  std::vector<LabelRecord> recs{
      {"a", "A1", Condition::FaceVisible, 1, plus(), ""},
      {"a", "A1", Condition::FaceBlurred, 1, na(), ""},
      {"b", "A1", Condition::FaceVisible, 2, plus(), ""},
      {"b", "A1", Condition::FaceBlurred, 2, plus(), ""},
      {"c", "A1", Condition::FaceVisible, 2, minus(), ""},
      {"c", "A1", Condition::FaceBlurred, 2, minus(), ""},
  };
  const auto rep = agreement_report(recs);
  CHECK_FALSE(rep.intra[0].cells[0].result.has_value());
  CHECK(rep.intra[0].cells[0].missing == "no overlap");
  CHECK(rep.intra[0].cells[1].result->kappa == 1.0);
  CHECK(rep.inter.empty());
  CHECK(format_report(rep).find("n/a (no overlap)") != std::string::npos);
}
