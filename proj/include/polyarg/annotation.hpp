#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace polyarg {

enum class Question { stance, quality, evidence };

std::string_view to_string(Question q);
std::optional<Question> parse_question(std::string_view s);

// Closed answer set of a question, in lexicographic order.
std::span<const std::string_view> answer_options(Question q);

// The answer counted as "supporting" (stance), "high quality" (quality) or
// "accepted" (evidence) in collection statistics.
bool is_positive_answer(Question q, std::string_view answer);

struct Judgment {
  std::string item_id;
  std::string annotator_id;
  Question question = Question::stance;
  std::string answer;
  bool is_test_question = false;
  std::optional<std::string> gold_answer;

  bool operator==(const Judgment&) const = default;
};

// All judgments share `question`; at most one judgment per (item, annotator).
class AnnotationSet {
 public:
  explicit AnnotationSet(Question q) : question_(q) {}
  AnnotationSet(Question q, std::vector<Judgment> judgments);

  // Throws polyarg::Error on a duplicate (item, annotator), a mismatched
  // question, an answer outside the option set, or a gold answer that does
  // not match the test-question flag.
  void add(Judgment j);

  Question question() const { return question_; }
  const std::vector<Judgment>& judgments() const { return judgments_; }
  std::size_t size() const { return judgments_.size(); }
  bool empty() const { return judgments_.empty(); }

  // Sorted, unique.
  std::vector<std::string> annotators() const;
  std::vector<std::string> items() const;

  // Keeps the judgments for which `keep` holds, order preserved.
  template <typename Pred>
  AnnotationSet filtered(Pred keep) const {
    AnnotationSet out(question_);
    for (const auto& j : judgments_) {
      if (keep(j)) {
        out.judgments_.push_back(j);
        out.keys_.emplace(j.item_id, j.annotator_id);
      }
    }
    return out;
  }

 private:
  Question question_;
  std::vector<Judgment> judgments_;
  std::set<std::pair<std::string, std::string>> keys_;
};

// Reads the annotation CSV (item_id, annotator_id, question, answer,
// is_test_question, gold_answer). All rows must share one question.
AnnotationSet load_annotations(const std::filesystem::path& path);

// Cohen's kappa over two aligned answer sequences. nullopt when the
// expected agreement is 1 (both raters use a single identical category).
std::optional<double> cohen_kappa(std::span<const std::string> a, std::span<const std::string> b);

enum class ExclusionReason { insufficient_peers, undefined_agreement };
std::string_view to_string(ExclusionReason r);

struct AgreementReport {
  // Retained annotators and their average pairwise kappa.
  std::map<std::string, double> per_annotator_avg_kappa;
  std::map<std::string, ExclusionReason> excluded;
  // Number of peers sharing at least min_common items, for every annotator.
  std::map<std::string, std::size_t> qualifying_peers;
  // Unweighted mean over retained annotators; nullopt when none remain.
  std::optional<double> overall_iaa;

  bool retained(const std::string& annotator) const {
    return per_annotator_avg_kappa.contains(annotator);
  }
};

AgreementReport annotator_agreement(const AnnotationSet& set, std::size_t min_common = 50,
                                    std::size_t min_peers = 5);

// Drops judgments of annotators not retained by `report`.
AnnotationSet retained_judgments(const AnnotationSet& set, const AgreementReport& report);

struct FilterResult {
  AnnotationSet set;
  std::vector<std::string> removed;
  // Annotators kept only because they answered no test question.
  std::vector<std::string> without_test_questions;
};

FilterResult filter_by_test_questions(const AnnotationSet& set, double min_accuracy = 0.75);

// Removes annotators labeling more than `max_high_fraction` of their
// answers "yes". Throws polyarg::Error unless the set is a quality set.
FilterResult filter_by_quality_prior(const AnnotationSet& set, double max_high_fraction = 0.8);

struct AggregatedLabel {
  std::string item_id;
  Question question = Question::stance;
  std::map<std::string, double> option_scores;
  std::string label;
  double confidence = 0;
  std::size_t n_answers = 0;
};

// Agreement-weighted vote per item. Weights are max(avg kappa, 0) of the
// retained annotators; if all weights vanish the plain vote share is used.
std::vector<AggregatedLabel> aggregate_wa(const AnnotationSet& set, const AgreementReport& report,
                                          std::size_t min_answers = 5);

// Overload with explicit per-annotator weights; annotators absent from the
// map do not contribute.
std::vector<AggregatedLabel> aggregate_weighted(const AnnotationSet& set,
                                                const std::map<std::string, double>& weights,
                                                std::size_t min_answers = 5);

// Per-item score used when correlating labels: share of "pro" (stance),
// "yes" (quality) or any accept option (evidence).
double wa_score(const AggregatedLabel& label);

struct CollectionStats {
  Question question = Question::stance;
  std::size_t items = 0;
  std::size_t labeled = 0;
  std::optional<double> iaa;
  // Per-annotator fraction of positive answers, averaged over annotators.
  double positive_fraction = 0;
};

CollectionStats annotation_stats(const AnnotationSet& set, std::size_t min_common = 50,
                                 std::size_t min_peers = 5, std::size_t min_answers = 5);

void write_labels_jsonl(std::span<const AggregatedLabel> labels, const std::filesystem::path& path);
std::vector<AggregatedLabel> read_labels_jsonl(const std::filesystem::path& path);

}  // namespace polyarg
