#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gma::agree {

enum class LabelValue { FMplus, FMminus, NotAssessable };

enum class NaReason { FussyCrying, Drowsy, Yawning, Refluxing, OverExcited, SelfSoothing, Distracted };

/// "FM+", "FM-", "NA"
std::string_view to_string(LabelValue v);
/// Also accepts "FMplus", "FMminus", "not-assessable" and lower case.
LabelValue parse_label_value(std::string_view text);
std::string_view to_string(NaReason r);
NaReason parse_na_reason(std::string_view text);

struct RatingLabel {
  LabelValue value = LabelValue::FMminus;
  std::optional<NaReason> reason;

  /// Throws InvalidLabel when a reason accompanies an FM label.
  void validate() const;
  friend bool operator==(const RatingLabel&, const RatingLabel&) = default;
};

enum class Condition { FaceVisible, FaceBlurred };
std::string_view to_string(Condition c);
Condition parse_condition(std::string_view text);

struct LabelRecord {
  std::string snippet_id;
  std::string assessor;
  Condition condition = Condition::FaceBlurred;
  int subset = 0;
  RatingLabel label;
  std::string timestamp;
  friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

inline constexpr const char* kLabelCsvHeader = "snippet_id,assessor,condition,subset,label,reason,timestamp";

/// Rows with `kLabelCsvHeader`. Throws FormatError / InvalidLabel.
std::vector<LabelRecord> read_labels_csv(std::istream& in);
void write_labels_csv(std::ostream& out, const std::vector<LabelRecord>& records);

/// snippet_id -> label for one assessor in one condition.
using LabelSet = std::map<std::string, RatingLabel>;

/// Selects one assessor/condition (optionally one subset). Throws
/// FormatError if a snippet is labelled twice.
LabelSet label_set(const std::vector<LabelRecord>& records, std::string_view assessor, Condition condition,
                   std::optional<int> subset = std::nullopt);

struct AssessedPair {
  std::string snippet_id;
  bool a_plus = false;
  bool b_plus = false;
};

/// Snippets labelled in both sets with neither label NotAssessable.
/// Throws EmptyOverlap when nothing survives.
std::vector<AssessedPair> filter_assessable(const LabelSet& a, const LabelSet& b);

/// counts[row][col]: row = rater A, col = rater B, index 0 = FM+, 1 = FM-.
struct ContingencyTable {
  std::array<std::array<long long, 2>, 2> counts{};

  long long n() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
  ContingencyTable transposed() const;
  /// Swaps the class order on both axes.
  ContingencyTable relabeled() const;
  static ContingencyTable from_pairs(const std::vector<AssessedPair>& pairs);
  friend bool operator==(const ContingencyTable&, const ContingencyTable&) = default;
};

/// Throws DegenerateMarginals when p_e = 1 and p_o < 1, DataError when n = 0.
double cohens_kappa(const ContingencyTable& t);

struct KappaResult {
  double kappa = 0;
  double lower = 0;
  double upper = 0;
  double se = 0;
  long long n = 0;
};

/// kappa +- z * sqrt(p_o (1 - p_o) / (n (1 - p_e)^2)), clipped to [-1, 1].
KappaResult kappa_ci(const ContingencyTable& t, double level = 0.95);

/// Percentile bootstrap over resampled pairs. Resamples with degenerate
/// marginals count as kappa = 1 if they agree perfectly and are skipped otherwise.
KappaResult kappa_bootstrap_ci(const ContingencyTable& t, int resamples, std::uint64_t seed,
                               double level = 0.95);

// ---------------------------------------------------------------------------
// Report

struct ReportCell {
  std::optional<KappaResult> result;
  std::string missing;  // why the cell is empty
};

struct ReportRow {
  std::string label;  // assessor or condition
  std::vector<ReportCell> cells;  // one per subset, then combined
};

struct AgreementReport {
  std::vector<int> subsets;
  std::vector<long long> subset_sizes;  // distinct snippets per subset
  std::vector<ReportRow> intra;  // per assessor: face-visible vs face-blurred
  std::vector<ReportRow> inter;  // per condition: assessor vs assessor
  std::vector<std::string> assessors;
  /// assessor -> condition -> NotAssessable count
  std::map<std::string, std::map<Condition, long long>> not_assessable;
};

/// Inter-rater rows need exactly two assessors; otherwise they are omitted.
AgreementReport agreement_report(const std::vector<LabelRecord>& records);

std::string format_report(const AgreementReport& report);
/// kind,row,column,kappa,lower,upper,n
void write_report_csv(std::ostream& out, const AgreementReport& report);

}  // namespace gma::agree
