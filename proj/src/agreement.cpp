#include "gma/agreement.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "gma/errors.hpp"
#include "gma/rng.hpp"

namespace gma::agree {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

constexpr std::pair<NaReason, std::string_view> kReasons[] = {
    {NaReason::FussyCrying, "fussy/crying"}, {NaReason::Drowsy, "drowsy"},
    {NaReason::Yawning, "yawning"},          {NaReason::Refluxing, "refluxing"},
    {NaReason::OverExcited, "over-excited"}, {NaReason::SelfSoothing, "self-soothing"},
    {NaReason::Distracted, "distracted"},
};

double z_quantile(double level) {
  if (!(level > 0 && level < 1)) throw ConfigError("confidence level must lie in (0,1)");
  return boost::math::quantile(boost::math::normal(), 0.5 + level / 2);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field += c;
    }
  }
  out.push_back(std::move(field));
  return out;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string_view to_string(LabelValue v) {
  switch (v) {
    case LabelValue::FMplus: return "FM+";
    case LabelValue::FMminus: return "FM-";
    case LabelValue::NotAssessable: return "NA";
  }
  return "";
}

LabelValue parse_label_value(std::string_view text) {
  const auto t = lower(text);
  if (t == "fm+" || t == "fmplus") return LabelValue::FMplus;
  if (t == "fm-" || t == "fmminus") return LabelValue::FMminus;
  if (t == "na" || t == "not-assessable" || t == "notassessable") return LabelValue::NotAssessable;
  throw InvalidLabel(fmt::format("unknown label '{}'", text));
}

std::string_view to_string(NaReason r) {
  for (auto [reason, name] : kReasons) {
    if (reason == r) return name;
  }
  return "";
}

NaReason parse_na_reason(std::string_view text) {
  const auto t = lower(text);
  for (auto [reason, name] : kReasons) {
    if (t == name) return reason;
  }
  throw InvalidLabel(fmt::format("unknown not-assessable reason '{}'", text));
}

void RatingLabel::validate() const {
  if (reason && value != LabelValue::NotAssessable) {
    throw InvalidLabel("a reason is only allowed with a not-assessable label");
  }
}

std::string_view to_string(Condition c) {
  return c == Condition::FaceVisible ? "face-visible" : "face-blurred";
}

Condition parse_condition(std::string_view text) {
  const auto t = lower(text);
  if (t == "face-visible" || t == "visible") return Condition::FaceVisible;
  if (t == "face-blurred" || t == "blurred") return Condition::FaceBlurred;
  throw FormatError(fmt::format("unknown condition '{}'", text));
}

std::vector<LabelRecord> read_labels_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("label CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kLabelCsvHeader) throw FormatError(fmt::format("unexpected label CSV header '{}'", line));
  std::vector<LabelRecord> out;
  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw FormatError(fmt::format("label CSV row {} has {} fields", row, f.size()));
    LabelRecord r;
    r.snippet_id = f[0];
    r.assessor = f[1];
    r.condition = parse_condition(f[2]);
    try {
      size_t used = 0;
      r.subset = std::stoi(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw FormatError(fmt::format("label CSV row {}: bad subset '{}'", row, f[3]));
    }
    r.label.value = parse_label_value(f[4]);
    if (!f[5].empty()) r.label.reason = parse_na_reason(f[5]);
    r.label.validate();
    r.timestamp = f[6];
    out.push_back(std::move(r));
  }
  return out;
}

void write_labels_csv(std::ostream& out, const std::vector<LabelRecord>& records) {
  out << kLabelCsvHeader << '\n';
  for (const auto& r : records) {
    out << csv_field(r.snippet_id) << ',' << csv_field(r.assessor) << ',' << to_string(r.condition) << ','
        << r.subset << ',' << to_string(r.label.value) << ','
        << (r.label.reason ? to_string(*r.label.reason) : "") << ',' << csv_field(r.timestamp) << '\n';
  }
}

LabelSet label_set(const std::vector<LabelRecord>& records, std::string_view assessor, Condition condition,
                   std::optional<int> subset) {
  LabelSet set;
  for (const auto& r : records) {
    if (r.assessor != assessor || r.condition != condition) continue;
    if (subset && r.subset != *subset) continue;
    if (!set.emplace(r.snippet_id, r.label).second) {
      throw FormatError(fmt::format("snippet {} labelled twice by {} ({})", r.snippet_id, assessor,
                                    to_string(condition)));
    }
  }
  return set;
}

std::vector<AssessedPair> filter_assessable(const LabelSet& a, const LabelSet& b) {
  std::vector<AssessedPair> out;
  for (const auto& [id, la] : a) {
    const auto it = b.find(id);
    if (it == b.end()) continue;
    const auto& lb = it->second;
    if (la.value == LabelValue::NotAssessable || lb.value == LabelValue::NotAssessable) continue;
    out.push_back({id, la.value == LabelValue::FMplus, lb.value == LabelValue::FMplus});
  }
  if (out.empty()) throw EmptyOverlap("no snippet is assessable in both label sets");
  return out;
}

ContingencyTable ContingencyTable::transposed() const {
  ContingencyTable t;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) t.counts[i][j] = counts[j][i];
  }
  return t;
}

ContingencyTable ContingencyTable::relabeled() const {
  ContingencyTable t;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) t.counts[i][j] = counts[1 - i][1 - j];
  }
  return t;
}

ContingencyTable ContingencyTable::from_pairs(const std::vector<AssessedPair>& pairs) {
  ContingencyTable t;
  for (const auto& p : pairs) ++t.counts[p.a_plus ? 0 : 1][p.b_plus ? 0 : 1];
  return t;
}

namespace {

struct Agreement {
  double po, pe;
};

Agreement agreement_of(const ContingencyTable& t) {
  const double n = static_cast<double>(t.n());
  if (n <= 0) throw DataError("contingency table is empty");
  const double po = static_cast<double>(t.counts[0][0] + t.counts[1][1]) / n;
  double pe = 0;
  for (int k = 0; k < 2; ++k) {
    const double row = static_cast<double>(t.counts[k][0] + t.counts[k][1]) / n;
    const double col = static_cast<double>(t.counts[0][k] + t.counts[1][k]) / n;
    pe += row * col;
  }
  return {po, pe};
}

}  // namespace

double cohens_kappa(const ContingencyTable& t) {
  const auto [po, pe] = agreement_of(t);
  if (pe >= 1.0) {
    if (po >= 1.0) return 1.0;
    throw DegenerateMarginals("both raters used a single class");
  }
  return (po - pe) / (1 - pe);
}

KappaResult kappa_ci(const ContingencyTable& t, double level) {
  if (t.n() < 2) throw TooFewSamples("a kappa interval needs at least two pairs");
  const auto [po, pe] = agreement_of(t);
  KappaResult r;
  r.n = t.n();
  r.kappa = cohens_kappa(t);
  r.se = pe >= 1.0 ? 0.0 : std::sqrt(po * (1 - po) / (static_cast<double>(r.n) * (1 - pe) * (1 - pe)));
  const double z = z_quantile(level);
  r.lower = std::clamp(r.kappa - z * r.se, -1.0, 1.0);
  r.upper = std::clamp(r.kappa + z * r.se, -1.0, 1.0);
  return r;
}

KappaResult kappa_bootstrap_ci(const ContingencyTable& t, int resamples, std::uint64_t seed, double level) {
  if (resamples < 1) throw ConfigError("bootstrap needs at least one resample");
  if (!(level > 0 && level < 1)) throw ConfigError("confidence level must lie in (0,1)");
  const long long n = t.n();
  if (n < 2) throw TooFewSamples("a kappa interval needs at least two pairs");
  const double cum[3] = {static_cast<double>(t.counts[0][0]),
                         static_cast<double>(t.counts[0][0] + t.counts[0][1]),
                         static_cast<double>(t.counts[0][0] + t.counts[0][1] + t.counts[1][0])};
  Rng rng(seed);
  std::vector<double> kappas;
  kappas.reserve(static_cast<size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    ContingencyTable s;
    for (long long i = 0; i < n; ++i) {
      const double u = static_cast<double>(rng.below(static_cast<std::uint64_t>(n)));
      const int cell = u < cum[0] ? 0 : u < cum[1] ? 1 : u < cum[2] ? 2 : 3;
      ++s.counts[cell / 2][cell % 2];
    }
    try {
      kappas.push_back(cohens_kappa(s));
    } catch (const DegenerateMarginals&) {
    }
  }
  if (kappas.empty()) throw DegenerateMarginals("every bootstrap resample was degenerate");
  std::sort(kappas.begin(), kappas.end());
  auto pct = [&](double q) {
    // Linear interpolation between order statistics.
    const double pos = q * static_cast<double>(kappas.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, kappas.size() - 1);
    return kappas[lo] + (pos - static_cast<double>(lo)) * (kappas[hi] - kappas[lo]);
  };
  KappaResult r;
  r.n = n;
  r.kappa = cohens_kappa(t);
  r.lower = std::clamp(pct((1 - level) / 2), -1.0, 1.0);
  r.upper = std::clamp(pct(1 - (1 - level) / 2), -1.0, 1.0);
  double mean = 0;
  for (double k : kappas) mean += k;
  mean /= static_cast<double>(kappas.size());
  double ss = 0;
  for (double k : kappas) ss += (k - mean) * (k - mean);
  r.se = kappas.size() > 1 ? std::sqrt(ss / static_cast<double>(kappas.size() - 1)) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Report

namespace {

ReportCell cell_for(const LabelSet& a, const LabelSet& b) {
  ReportCell cell;
  try {
    cell.result = kappa_ci(ContingencyTable::from_pairs(filter_assessable(a, b)));
  } catch (const EmptyOverlap&) {
    cell.missing = "no overlap";
  } catch (const DegenerateMarginals&) {
    cell.missing = "degenerate marginals";
  } catch (const TooFewSamples&) {
    cell.missing = "too few pairs";
  }
  return cell;
}

std::string fmt_coef(double v) {
  // ".95", "1", "-.10" in the style of the published tables
  if (v >= 1.0) return "1";
  if (v <= -1.0) return "-1";
  std::string s = fmt::format("{:.2f}", v);
  if (s.starts_with("0.")) s.erase(0, 1);
  if (s.starts_with("-0.")) s.erase(1, 1);
  if (s == "1.00") return "1";
  return s;
}

std::string fmt_cell(const ReportCell& c) {
  if (!c.result) return fmt::format("n/a ({})", c.missing);
  return fmt::format("{} [{}, {}]", fmt_coef(c.result->kappa), fmt_coef(c.result->lower),
                     fmt_coef(c.result->upper));
}

}  // namespace

AgreementReport agreement_report(const std::vector<LabelRecord>& records) {
  AgreementReport rep;
  std::set<int> subsets;
  std::set<std::string> assessors;
  std::map<int, std::set<std::string>> ids_per_subset;
  for (const auto& r : records) {
    subsets.insert(r.subset);
    assessors.insert(r.assessor);
    ids_per_subset[r.subset].insert(r.snippet_id);
    if (r.label.value == LabelValue::NotAssessable) ++rep.not_assessable[r.assessor][r.condition];
  }
  rep.subsets.assign(subsets.begin(), subsets.end());
  rep.assessors.assign(assessors.begin(), assessors.end());
  long long total = 0;
  for (int s : rep.subsets) {
    rep.subset_sizes.push_back(static_cast<long long>(ids_per_subset[s].size()));
    total += rep.subset_sizes.back();
  }
  rep.subset_sizes.push_back(total);
  for (const auto& a : rep.assessors) {
    for (auto c : {Condition::FaceVisible, Condition::FaceBlurred}) rep.not_assessable[a][c] += 0;
  }

  auto row_cells = [&](auto&& sets_for) {
    std::vector<ReportCell> cells;
    for (int s : rep.subsets) {
      auto [a, b] = sets_for(std::optional<int>(s));
      cells.push_back(cell_for(a, b));
    }
    auto [a, b] = sets_for(std::optional<int>());
    cells.push_back(cell_for(a, b));
    return cells;
  };

  for (const auto& who : rep.assessors) {
    rep.intra.push_back({who, row_cells([&](std::optional<int> s) {
                           return std::pair{label_set(records, who, Condition::FaceVisible, s),
                                            label_set(records, who, Condition::FaceBlurred, s)};
                         })});
  }
  if (rep.assessors.size() == 2) {
    for (auto c : {Condition::FaceVisible, Condition::FaceBlurred}) {
      rep.inter.push_back({std::string(to_string(c)), row_cells([&](std::optional<int> s) {
                             return std::pair{label_set(records, rep.assessors[0], c, s),
                                              label_set(records, rep.assessors[1], c, s)};
                           })});
    }
  }
  return rep;
}

std::string format_report(const AgreementReport& rep) {
  std::vector<std::string> header{""};
  for (size_t i = 0; i < rep.subsets.size(); ++i) header.push_back(fmt::format("Subset {}", rep.subsets[i]));
  header.push_back(fmt::format("Combined ({} snippets)", rep.subset_sizes.back()));

  auto table = [&](const std::vector<ReportRow>& rows) {
    std::vector<std::vector<std::string>> grid{header};
    for (const auto& row : rows) {
      std::vector<std::string> line{row.label};
      for (const auto& c : row.cells) line.push_back(fmt_cell(c));
      grid.push_back(std::move(line));
    }
    std::vector<size_t> width(header.size(), 0);
    for (const auto& line : grid) {
      for (size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
    }
    std::string out;
    for (const auto& line : grid) {
      std::string text;
      for (size_t i = 0; i < line.size(); ++i) text += fmt::format("{:<{}}  ", line[i], width[i]);
      while (!text.empty() && text.back() == ' ') text.pop_back();
      out += text + "\n";
    }
    return out;
  };

  std::string out = "Intra-rater agreement (Cohen's kappa and [.95 CI]), face-visible vs face-blurred\n";
  out += table(rep.intra);
  if (!rep.inter.empty()) {
    out += fmt::format("\nInter-rater agreement ({} vs {})\n", rep.assessors[0], rep.assessors[1]);
    out += table(rep.inter);
  }
  out += "\nNot assessable\n";
  for (const auto& [who, by_condition] : rep.not_assessable) {
    out += fmt::format("{}: {} face-visible, {} face-blurred\n", who, by_condition.at(Condition::FaceVisible),
                       by_condition.at(Condition::FaceBlurred));
  }
  return out;
}

void write_report_csv(std::ostream& out, const AgreementReport& rep) {
  out << "kind,row,column,kappa,lower,upper,n\n";
  auto emit = [&](std::string_view kind, const std::vector<ReportRow>& rows) {
    for (const auto& row : rows) {
      for (size_t i = 0; i < row.cells.size(); ++i) {
        const std::string col = i < rep.subsets.size() ? fmt::format("subset{}", rep.subsets[i]) : "combined";
        const auto& c = row.cells[i];
        if (c.result) {
          out << fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{}\n", kind, csv_field(row.label), col, c.result->kappa,
                             c.result->lower, c.result->upper, c.result->n);
        } else {
          out << fmt::format("{},{},{},,,,0\n", kind, csv_field(row.label), col);
        }
      }
    }
  };
  emit("intra", rep.intra);
  emit("inter", rep.inter);
  for (const auto& [who, by_condition] : rep.not_assessable) {
    for (const auto& [cond, count] : by_condition) {
      out << fmt::format("not-assessable,{},{},,,,{}\n", csv_field(who), to_string(cond), count);
    }
  }
}

}  // namespace gma::agree
