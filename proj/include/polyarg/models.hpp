#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "polyarg/corpus.hpp"

namespace polyarg {

// Topic/text pair fed to a scorer.
struct ScoringItem {
  std::string topic;
  std::string text;
};

struct Prediction {
  std::string label;  // class name; empty for the quality (regression) task
  double score = 0;   // positive-class probability, or the regressed value
};

// Positive/negative class names of a classification task. The quality task
// has none and throws.
std::pair<std::string_view, std::string_view> task_classes(TaskKind task);
bool is_classification(TaskKind task);

// Gold class of a selected record (stance label or task class). Throws when
// the record lacks it.
std::string gold_class(const Record& r, TaskKind task);
double gold_value(const Record& r, TaskKind task);

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual void fit(const Dataset& train, TaskKind task, std::uint64_t seed) = 0;
  // Same length as `items`; each prediction depends only on its own item.
  virtual std::vector<Prediction> predict(std::span<const ScoringItem> items) const = 0;
};

struct BaselineHyperparams {
  int ngram_min = 2;
  int ngram_max = 4;
  std::uint32_t hash_buckets = 1u << 18;
  int epochs_classification = 10;
  int epochs_regression = 3;
  double learning_rate = 0.1;
  double l2 = 1e-6;

  std::vector<std::string> violations() const;
};

// Feature index/value pairs, sorted by index, unique indices.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

// Separates topic and text in the featurized string.
inline constexpr std::string_view kTopicSeparator = "\xC2\xA7";  // U+00A7

// Lowercased "topic§text" character n-grams, hashed and L2-normalized.
SparseVector featurize(std::string_view topic, std::string_view text, const BaselineHyperparams& hp);

// Distinct n-gram strings of one length over the lowercased "topic§text".
std::vector<std::string> char_ngrams(std::string_view topic, std::string_view text, int n);

// Hashed character n-gram linear model: logistic loss for stance/evidence,
// squared loss for quality; plain SGD, seeded shuffling, last epoch kept.
class BaselineScorer : public Scorer {
 public:
  explicit BaselineScorer(BaselineHyperparams hp = {}) : hp_(hp) {}

  void fit(const Dataset& train, TaskKind task, std::uint64_t seed) override;
  std::vector<Prediction> predict(std::span<const ScoringItem> items) const override;

  Prediction predict_one(const ScoringItem& item) const;
  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  // Mean training loss measured after each epoch.
  const std::vector<double>& epoch_losses() const { return epoch_losses_; }

 private:
  BaselineHyperparams hp_;
  TaskKind task_ = TaskKind::stance;
  bool fitted_ = false;
  std::vector<double> weights_;
  double bias_ = 0;
  std::vector<double> epoch_losses_;
};

// Convenience wrapper: constructs and fits a baseline.
std::unique_ptr<BaselineScorer> fit_baseline(const Dataset& train, TaskKind task, const BaselineHyperparams& hp,
                                             std::uint64_t seed);

struct RemoteOptions {
  std::size_t batch_size = 64;
  int max_attempts = 3;
  std::chrono::milliseconds backoff{200};
  std::chrono::milliseconds timeout{std::chrono::seconds(120)};
};

// POST {endpoint}/predict. Classification scores are thresholded at 0.5
// client-side.
std::vector<Prediction> remote_predict(const std::string& endpoint, std::span<const ScoringItem> items,
                                       TaskKind task, const RemoteOptions& opts = {});

// Scorer backed by a model server that is already trained; fit only records
// the task.
class RemoteScorer : public Scorer {
 public:
  explicit RemoteScorer(std::string endpoint, RemoteOptions opts = {})
      : endpoint_(std::move(endpoint)), opts_(opts) {}
  void fit(const Dataset& train, TaskKind task, std::uint64_t seed) override;
  std::vector<Prediction> predict(std::span<const ScoringItem> items) const override;

 private:
  std::string endpoint_;
  RemoteOptions opts_;
  TaskKind task_ = TaskKind::stance;
};

std::vector<ScoringItem> scoring_items(const Dataset& ds);

// ---------------------------------------------------------------------------
// Multi-seed experiments.
// ---------------------------------------------------------------------------

enum class ModelKind { baseline, remote };
std::string_view to_string(ModelKind k);

struct ExperimentConfig {
  TaskKind task = TaskKind::stance;
  std::string group;  // label recorded in the manifest
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  ModelKind model = ModelKind::baseline;
  BaselineHyperparams baseline;
  std::string remote_endpoint;
  RemoteOptions remote;
  std::size_t workers = 1;  // seeds trained in parallel
};

struct EvalSet {
  std::string lang;
  std::string path;  // recorded in the manifest for downstream evaluation
  Dataset data;
};

struct PredictionFile {
  std::string lang;
  std::uint64_t seed = 0;
  std::filesystem::path path;
};

struct ExperimentResult {
  std::vector<PredictionFile> files;
  std::filesystem::path manifest;
};

std::string prediction_file_name(std::uint64_t seed);

// For each seed: fit on `train`, predict every eval set, write
// <out_dir>/<lang>/seed_<seed>.jsonl, then <out_dir>/manifest.json.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& train, std::span<const EvalSet> evals,
                                const std::filesystem::path& out_dir);

struct PredictionRow {
  std::string id;
  std::string label;  // empty for regression
  double score = 0;
};

void write_predictions(const Dataset& eval, std::span<const Prediction> preds, TaskKind task,
                       const std::filesystem::path& path);
std::vector<PredictionRow> read_predictions(const std::filesystem::path& path);

}  // namespace polyarg
