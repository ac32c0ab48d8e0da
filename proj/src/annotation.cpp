#include "polyarg/annotation.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include <fmt/format.h>
#include "json.hpp"

#include "polyarg/csv.hpp"
#include "polyarg/error.hpp"
#include "polyarg/text.hpp"

namespace polyarg {

namespace {

constexpr std::array<std::string_view, 3> kStanceOptions{"con", "neutral", "pro"};
constexpr std::array<std::string_view, 2> kQualityOptions{"no", "yes"};
constexpr std::array<std::string_view, 3> kEvidenceOptions{"accept-con", "accept-pro", "reject"};

// Score gap below which two options count as tied.
constexpr double kTieEpsilon = 1e-12;

}  // namespace

std::string_view to_string(Question q) {
  switch (q) {
    case Question::stance: return "stance";
    case Question::quality: return "quality";
    case Question::evidence: return "evidence";
  }
  return "?";
}

std::optional<Question> parse_question(std::string_view s) {
  for (auto q : {Question::stance, Question::quality, Question::evidence}) {
    if (to_string(q) == s) return q;
  }
  return std::nullopt;
}

std::span<const std::string_view> answer_options(Question q) {
  switch (q) {
    case Question::stance: return kStanceOptions;
    case Question::quality: return kQualityOptions;
    case Question::evidence: return kEvidenceOptions;
  }
  return {};
}

bool is_positive_answer(Question q, std::string_view answer) {
  switch (q) {
    case Question::stance: return answer == "pro";
    case Question::quality: return answer == "yes";
    case Question::evidence: return answer == "accept-pro" || answer == "accept-con";
  }
  return false;
}

std::string_view to_string(ExclusionReason r) {
  switch (r) {
    case ExclusionReason::insufficient_peers: return "insufficient_peers";
    case ExclusionReason::undefined_agreement: return "undefined_agreement";
  }
  return "?";
}

AnnotationSet::AnnotationSet(Question q, std::vector<Judgment> judgments) : question_(q) {
  judgments_.reserve(judgments.size());
  for (auto& j : judgments) add(std::move(j));
}

void AnnotationSet::add(Judgment j) {
  if (j.question != question_) {
    throw Error(fmt::format("judgment ({}, {}) is a {} question in a {} set", j.item_id,
                            j.annotator_id, to_string(j.question), to_string(question_)));
  }
  auto opts = answer_options(question_);
  auto valid = [&](std::string_view a) { return std::find(opts.begin(), opts.end(), a) != opts.end(); };
  if (!valid(j.answer)) {
    throw Error(fmt::format("judgment ({}, {}): answer '{}' is not a {} option", j.item_id,
                            j.annotator_id, j.answer, to_string(question_)));
  }
  if (j.is_test_question != j.gold_answer.has_value()) {
    throw Error(fmt::format("judgment ({}, {}): gold answer must be present iff it is a test question",
                            j.item_id, j.annotator_id));
  }
  if (j.gold_answer && !valid(*j.gold_answer)) {
    throw Error(fmt::format("judgment ({}, {}): gold answer '{}' is not a {} option", j.item_id,
                            j.annotator_id, *j.gold_answer, to_string(question_)));
  }
  if (!keys_.emplace(j.item_id, j.annotator_id).second) {
    throw Error(fmt::format("duplicate judgment for item {} by annotator {}", j.item_id, j.annotator_id));
  }
  judgments_.push_back(std::move(j));
}

std::vector<std::string> AnnotationSet::annotators() const {
  std::set<std::string> s;
  for (const auto& j : judgments_) s.insert(j.annotator_id);
  return {s.begin(), s.end()};
}

std::vector<std::string> AnnotationSet::items() const {
  std::set<std::string> s;
  for (const auto& j : judgments_) s.insert(j.item_id);
  return {s.begin(), s.end()};
}

AnnotationSet load_annotations(const std::filesystem::path& path) {
  const std::string file = path.string();
  auto rows = csv::read_file(path);
  if (rows.empty()) throw ParseError(file, 0, "", "missing header row");
  std::map<std::string, std::size_t, std::less<>> col;
  for (std::size_t i = 0; i < rows[0].fields.size(); ++i) col.emplace(std::string(trim(rows[0].fields[i])), i);
  for (auto name : {"item_id", "annotator_id", "question", "answer", "is_test_question", "gold_answer"}) {
    if (!col.contains(name)) throw ParseError(file, 0, name, "missing column");
  }
  if (rows.size() < 2) throw ParseError(file, 0, "", "no judgments");

  std::optional<AnnotationSet> set;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& f = rows[i].fields;
    if (f.size() != rows[0].fields.size()) {
      throw ParseError(file, i, "", fmt::format("expected {} fields, found {}", rows[0].fields.size(), f.size()));
    }
    auto cell = [&](std::string_view name) { return std::string(trim(f[col.find(name)->second])); };
    Judgment j;
    j.item_id = cell("item_id");
    j.annotator_id = cell("annotator_id");
    if (j.item_id.empty()) throw ParseError(file, i, "item_id", "missing or empty");
    if (j.annotator_id.empty()) throw ParseError(file, i, "annotator_id", "missing or empty");
    auto q = parse_question(cell("question"));
    if (!q) throw ParseError(file, i, "question", fmt::format("unknown question '{}'", cell("question")));
    j.question = *q;
    j.answer = cell("answer");
    auto tq = ascii_lower(cell("is_test_question"));
    if (tq == "true" || tq == "1") {
      j.is_test_question = true;
    } else if (tq == "false" || tq == "0" || tq.empty()) {
      j.is_test_question = false;
    } else {
      throw ParseError(file, i, "is_test_question", fmt::format("expected true/false, got '{}'", tq));
    }
    if (auto g = cell("gold_answer"); !g.empty()) j.gold_answer = g;
    if (!set) set.emplace(j.question);
    try {
      set->add(std::move(j));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(file, i, "", e.what());
    }
  }
  return std::move(*set);
}

std::optional<double> cohen_kappa(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.size() != b.size()) {
    throw Error(fmt::format("cohen_kappa: length mismatch ({} vs {})", a.size(), b.size()));
  }
  if (a.empty()) throw Error("cohen_kappa: no common items");
  const auto n = static_cast<double>(a.size());
  std::map<std::string_view, std::pair<std::size_t, std::size_t>> marginals;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i]) ++agree;
    ++marginals[a[i]].first;
    ++marginals[b[i]].second;
  }
  const double p_o = static_cast<double>(agree) / n;
  double p_e = 0;
  for (const auto& [_, m] : marginals) {
    p_e += (static_cast<double>(m.first) / n) * (static_cast<double>(m.second) / n);
  }
  if (p_e >= 1.0 - 1e-12) return std::nullopt;
  return (p_o - p_e) / (1.0 - p_e);
}

AgreementReport annotator_agreement(const AnnotationSet& set, std::size_t min_common, std::size_t min_peers) {
  // annotator -> (item -> answer), both sorted.
  std::map<std::string, std::map<std::string, std::string>> answers;
  for (const auto& j : set.judgments()) answers[j.annotator_id][j.item_id] = j.answer;

  std::vector<std::string> ids;
  for (const auto& [id, _] : answers) ids.push_back(id);

  std::map<std::string, std::vector<double>> kappas;
  AgreementReport rep;
  for (const auto& id : ids) rep.qualifying_peers[id] = 0;

  std::vector<std::string> xs, ys;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t k = i + 1; k < ids.size(); ++k) {
      const auto& ai = answers[ids[i]];
      const auto& ak = answers[ids[k]];
      xs.clear();
      ys.clear();
      for (const auto& [item, ans] : ai) {
        if (auto it = ak.find(item); it != ak.end()) {
          xs.push_back(ans);
          ys.push_back(it->second);
        }
      }
      if (xs.size() < min_common || xs.empty()) continue;
      ++rep.qualifying_peers[ids[i]];
      ++rep.qualifying_peers[ids[k]];
      if (auto kappa = cohen_kappa(xs, ys)) {
        kappas[ids[i]].push_back(*kappa);
        kappas[ids[k]].push_back(*kappa);
      }
    }
  }

  double sum = 0;
  for (const auto& id : ids) {
    if (rep.qualifying_peers[id] < min_peers) {
      rep.excluded.emplace(id, ExclusionReason::insufficient_peers);
      continue;
    }
    const auto& ks = kappas[id];
    if (ks.empty()) {
      rep.excluded.emplace(id, ExclusionReason::undefined_agreement);
      continue;
    }
    double s = 0;
    for (double v : ks) s += v;
    const double avg = s / static_cast<double>(ks.size());
    rep.per_annotator_avg_kappa.emplace(id, avg);
    sum += avg;
  }
  if (!rep.per_annotator_avg_kappa.empty()) {
    rep.overall_iaa = sum / static_cast<double>(rep.per_annotator_avg_kappa.size());
  }
  return rep;
}

AnnotationSet retained_judgments(const AnnotationSet& set, const AgreementReport& report) {
  return set.filtered([&](const Judgment& j) { return report.retained(j.annotator_id); });
}

FilterResult filter_by_test_questions(const AnnotationSet& set, double min_accuracy) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tq;  // correct, total
  for (const auto& j : set.judgments()) {
    auto& [correct, total] = tq[j.annotator_id];
    if (!j.is_test_question) continue;
    ++total;
    if (j.answer == *j.gold_answer) ++correct;
  }
  std::set<std::string> removed;
  std::vector<std::string> without;
  for (const auto& [id, ct] : tq) {
    if (ct.second == 0) {
      without.push_back(id);
      continue;
    }
    if (static_cast<double>(ct.first) / static_cast<double>(ct.second) < min_accuracy) removed.insert(id);
  }
  return {set.filtered([&](const Judgment& j) { return !removed.contains(j.annotator_id); }),
          {removed.begin(), removed.end()}, std::move(without)};
}

FilterResult filter_by_quality_prior(const AnnotationSet& set, double max_high_fraction) {
  if (set.question() != Question::quality) {
    throw Error(fmt::format("quality-prior filter needs a quality set, got {}", to_string(set.question())));
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // yes, total
  for (const auto& j : set.judgments()) {
    auto& [yes, total] = counts[j.annotator_id];
    ++total;
    if (j.answer == "yes") ++yes;
  }
  std::set<std::string> removed;
  for (const auto& [id, c] : counts) {
    if (static_cast<double>(c.first) / static_cast<double>(c.second) > max_high_fraction) removed.insert(id);
  }
  return {set.filtered([&](const Judgment& j) { return !removed.contains(j.annotator_id); }),
          {removed.begin(), removed.end()}, {}};
}

std::vector<AggregatedLabel> aggregate_weighted(const AnnotationSet& set,
                                                const std::map<std::string, double>& weights,
                                                std::size_t min_answers) {
  // Sorting by (item, annotator) makes the floating-point sums independent
  // of input order.
  std::vector<const Judgment*> js;
  for (const auto& j : set.judgments()) {
    if (weights.contains(j.annotator_id)) js.push_back(&j);
  }
  std::sort(js.begin(), js.end(), [](const Judgment* a, const Judgment* b) {
    return std::tie(a->item_id, a->annotator_id) < std::tie(b->item_id, b->annotator_id);
  });

  std::vector<AggregatedLabel> out;
  for (std::size_t lo = 0; lo < js.size();) {
    std::size_t hi = lo;
    while (hi < js.size() && js[hi]->item_id == js[lo]->item_id) ++hi;
    const std::size_t n = hi - lo;
    if (n >= min_answers) {
      std::map<std::string, double> weighted, plain;
      double total = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        const double w = std::max(weights.at(js[i]->annotator_id), 0.0);
        weighted[js[i]->answer] += w;
        plain[js[i]->answer] += 1.0;
        total += w;
      }
      auto& shares = total > 0 ? weighted : plain;
      const double denom = total > 0 ? total : static_cast<double>(n);
      AggregatedLabel lab;
      lab.item_id = js[lo]->item_id;
      lab.question = set.question();
      lab.n_answers = n;
      double best = -1;
      for (const auto& [opt, s] : shares) {
        const double share = s / denom;
        lab.option_scores.emplace(opt, share);
        if (share > best + kTieEpsilon) {
          best = share;
          lab.label = opt;
        }
      }
      lab.confidence = lab.option_scores.at(lab.label);
      out.push_back(std::move(lab));
    }
    lo = hi;
  }
  return out;
}

std::vector<AggregatedLabel> aggregate_wa(const AnnotationSet& set, const AgreementReport& report,
                                          std::size_t min_answers) {
  return aggregate_weighted(set, report.per_annotator_avg_kappa, min_answers);
}

double wa_score(const AggregatedLabel& label) {
  double s = 0;
  for (const auto& [opt, v] : label.option_scores) {
    if (is_positive_answer(label.question, opt)) s += v;
  }
  return s;
}

CollectionStats annotation_stats(const AnnotationSet& set, std::size_t min_common, std::size_t min_peers,
                                 std::size_t min_answers) {
  CollectionStats st;
  st.question = set.question();
  st.items = set.items().size();
  const auto report = annotator_agreement(set, min_common, min_peers);
  st.iaa = report.overall_iaa;
  st.labeled = aggregate_wa(set, report, min_answers).size();

  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // positive, total
  for (const auto& j : set.judgments()) {
    auto& [pos, total] = counts[j.annotator_id];
    ++total;
    if (is_positive_answer(set.question(), j.answer)) ++pos;
  }
  double sum = 0;
  for (const auto& [_, c] : counts) sum += static_cast<double>(c.first) / static_cast<double>(c.second);
  st.positive_fraction = counts.empty() ? 0.0 : sum / static_cast<double>(counts.size());
  return st;
}

void write_labels_jsonl(std::span<const AggregatedLabel> labels, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& l : labels) {
    nlohmann::ordered_json j;
    j["item_id"] = l.item_id;
    j["question"] = to_string(l.question);
    j["label"] = l.label;
    j["confidence"] = l.confidence;
    j["n_answers"] = l.n_answers;
    j["option_scores"] = l.option_scores;
    out << j.dump() << '\n';
  }
}

std::vector<AggregatedLabel> read_labels_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<AggregatedLabel> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      AggregatedLabel l;
      l.item_id = j.at("item_id").get<std::string>();
      auto q = parse_question(j.at("question").get<std::string>());
      if (!q) throw Error("unknown question");
      l.question = *q;
      l.label = j.at("label").get<std::string>();
      l.confidence = j.at("confidence").get<double>();
      l.n_answers = j.at("n_answers").get<std::size_t>();
      l.option_scores = j.at("option_scores").get<std::map<std::string, double>>();
      out.push_back(std::move(l));
    } catch (const std::exception& e) {
      throw ParseError(path.string(), lineno, "", e.what());
    }
  }
  return out;
}

}  // namespace polyarg
