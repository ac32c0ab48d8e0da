#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace polyarg {

enum class Split { train, dev, test };
enum class Stance { pro, con, neutral };
enum class Source { arg_corpus, evi_corpus, vld_corpus, human_generated, machine_translated };
enum class TaskKind { stance, quality, evidence };

inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::dev, Split::test};
inline constexpr std::array<TaskKind, 3> kAllTasks{TaskKind::stance, TaskKind::quality,
                                                   TaskKind::evidence};

std::string_view to_string(Split s);
std::string_view to_string(Stance s);
std::string_view to_string(Source s);
std::string_view to_string(TaskKind t);

// The parse_* helpers return nullopt on unknown names.
std::optional<Split> parse_split(std::string_view s);
std::optional<Stance> parse_stance(std::string_view s);
std::optional<Source> parse_source(std::string_view s);
std::optional<TaskKind> parse_task(std::string_view s);

// Binary classes attached by select_for_task for the quality and evidence
// tasks. Stance keeps its own pro/con label.
inline constexpr std::string_view kQualityHigh = "high";
inline constexpr std::string_view kQualityLow = "low";
inline constexpr std::string_view kEvidence = "evidence";
inline constexpr std::string_view kNonEvidence = "non_evidence";

// One argument or evidence sentence.
struct Record {
  std::string id;
  int topic_id = 0;
  std::string topic;
  std::string text;
  std::string lang;
  Split split = Split::train;
  std::optional<Stance> stance_label;
  std::optional<double> stance_conf;
  std::optional<double> quality_score;
  std::optional<double> evidence_score;
  Source source = Source::arg_corpus;
  // Set by select_for_task for quality/evidence; empty otherwise.
  std::optional<std::string> task_class;

  bool operator==(const Record&) const = default;
};

// Insertion-ordered collection of records.
struct Dataset {
  std::string name;
  std::vector<Record> records;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  bool operator==(const Dataset&) const = default;
};

// Throws polyarg::Error when a record breaks a Record invariant.
void validate_record(const Record& r);

// Returns the records of one split, order preserved.
Dataset filter_split(const Dataset& ds, Split split);

enum class CorpusKind { arg, evi, vld, human, unlabeled };
enum class FileFormat { csv, jsonl };

std::optional<CorpusKind> parse_corpus_kind(std::string_view s);
std::optional<FileFormat> parse_file_format(std::string_view s);
std::string_view to_string(CorpusKind k);
// Source used for rows that leave the `source` column empty.
Source default_source(CorpusKind k);

// Reads a corpus file. Unknown columns/keys produce one warning each; when
// `warnings` is null they go to stderr. Rows of an `unlabeled` corpus have
// every label and score cleared.
Dataset load_corpus(const std::filesystem::path& path, CorpusKind kind, FileFormat format,
                    std::vector<std::string>* warnings = nullptr);

// Format inferred from the extension (.csv, otherwise JSONL).
FileFormat format_for_path(const std::filesystem::path& path);

void write_jsonl(const Dataset& ds, const std::filesystem::path& path);

struct SelectionThresholds {
  double stance_conf_min = 0.75;
  double quality_high_min = 0.9;
  double quality_low_max = 0.4;
  double evidence_pos_min = 0.7;
  double evidence_neg_max = 0.3;
  double vld_pos_min = 0.95;
  double vld_neg_max = 0.05;

  // Empty when all invariants hold.
  std::vector<std::string> violations() const;
};

struct SelectionResult {
  Dataset dataset;
  std::size_t kept = 0;
  std::size_t dropped = 0;
  // Records missing the score or label the task needs.
  std::size_t skipped = 0;
};

// Applies the per-task score thresholds. All comparisons are strict.
SelectionResult select_for_task(const Dataset& ds, TaskKind task, const SelectionThresholds& th);

struct StatsRow {
  std::string name;  // split name or "total"
  std::size_t topics = 0;
  std::vector<std::size_t> counts;  // aligned with StatsReport::columns
};

struct StatsReport {
  TaskKind task = TaskKind::stance;
  std::vector<std::string> columns;
  std::vector<StatsRow> rows;  // train, dev, test, total

  const StatsRow& row(std::string_view name) const;
  std::string to_csv() const;
};

StatsReport corpus_stats(const Dataset& ds, TaskKind task);

}  // namespace polyarg
