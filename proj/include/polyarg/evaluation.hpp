#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polyarg/annotation.hpp"
#include "polyarg/corpus.hpp"

namespace polyarg {

// Unweighted mean of per-class F1 over the union of gold and predicted
// classes; a class with P + R = 0 scores 0.
double macro_f1(std::span<const std::string> gold, std::span<const std::string> pred);

// Product-moment correlation. Throws on length mismatch, fewer than two
// points, or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

// Corpus BLEU over whitespace tokens: clipped n-gram precisions (n = 1..4)
// pooled over the corpus, uniform geometric mean, brevity penalty, no
// smoothing.
double corpus_bleu(std::span<const std::string> candidates, std::span<const std::string> references);

struct TopicScore {
  int topic_id = 0;
  double value = 0;
  std::size_t n = 0;
  // Gold labels of the topic cover a single class.
  bool single_class_gold = false;
};

// macro_f1 computed per topic partition. Topics listed in `order` come first
// in that order; the rest follow by ascending id.
std::vector<TopicScore> per_topic(std::span<const std::string> gold, std::span<const std::string> pred,
                                  std::span<const int> topic_ids, std::span<const int> order = {});

struct RunSummary {
  double mean = 0;
  std::optional<double> std;  // sample (n - 1) deviation, n >= 2 only
  std::size_t n = 0;
};

RunSummary aggregate_runs(std::span<const double> values);

// Pearson correlation between original and translated WA-scores over items
// matched by id. Quality and evidence items are kept only when the original
// score meets the selection thresholds; stance items need at least
// `min_stance_labels` answers on the translated side.
struct PreservationResult {
  double pearson = 0;
  std::size_t matched = 0;
  std::size_t used = 0;
};

PreservationResult label_preservation(std::span<const AggregatedLabel> original,
                                      std::span<const AggregatedLabel> translated, TaskKind task,
                                      const SelectionThresholds& filters, std::size_t min_stance_labels = 6);

// Test-set topics of the argument corpus, by id (1..15).
const std::map<int, std::string_view>& topic_table();

enum class Metric { macro_f1, pearson, bleu };
std::string_view to_string(Metric m);
Metric metric_for(TaskKind task);

struct ReportEntry {
  std::string model;
  std::string group;
  std::string lang;
  std::string task;
  Metric metric = Metric::macro_f1;
  RunSummary summary;
};

struct EvalReport {
  std::vector<ReportEntry> entries;

  // CSV with columns model,group,lang,task,metric,mean,std,n_runs.
  std::string to_csv() const;

  // Plain-text table of one (task, metric): rows are groups, columns are
  // languages, values in percent with one decimal.
  std::string render_table(std::string_view task, Metric metric) const;
};

// CSV with columns topic_id,topic,value,single_class_gold. The topic name
// falls back to `names`, then to the built-in topic table.
std::string per_topic_csv(std::span<const TopicScore> scores, const std::map<int, std::string>& names = {});

}  // namespace polyarg
