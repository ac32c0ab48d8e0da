#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "polyarg/corpus.hpp"
#include "polyarg/models.hpp"
#include "polyarg/translation.hpp"

namespace polyarg {

inline constexpr std::string_view kVersion = "0.1.0";

// Environment variables overriding endpoints from the config file.
inline constexpr const char* kModelEndpointEnv = "POLYARG_MODEL_ENDPOINT";
inline constexpr const char* kTranslationEndpointEnv = "POLYARG_TRANSLATION_ENDPOINT";

struct CorpusSpec {
  CorpusKind kind = CorpusKind::arg;
  std::filesystem::path path;
  FileFormat format = FileFormat::jsonl;
};

// One experiment dataset: a task on one corpus, optionally augmented with
// extra training corpora and evaluated on human-authored data.
struct TaskSpec {
  std::string name;
  TaskKind task = TaskKind::stance;
  CorpusKind corpus = CorpusKind::arg;
  std::vector<CorpusKind> extra_train;
  bool eval_human = false;
};

struct TranslationSettings {
  std::string client = "mock";  // mock | http
  std::string endpoint;
  std::filesystem::path cache;
  TranslateOptions options;
};

struct AnnotationSpec {
  std::string name;
  std::filesystem::path path;
  std::size_t min_common = 50;
  std::size_t min_peers = 5;
  std::size_t min_answers = 5;
  double tq_min_accuracy = 0.75;
  double max_high_fraction = 0.8;
};

struct PreservationSpec {
  std::string name;
  TaskKind task = TaskKind::stance;
  std::filesystem::path original;
  std::filesystem::path translated;
  std::size_t min_stance_labels = 6;
};

struct PipelineConfig {
  std::filesystem::path source;  // config file
  std::string raw_text;          // verbatim config, for the manifest
  std::filesystem::path output;
  std::map<CorpusKind, CorpusSpec> corpora;
  SelectionThresholds thresholds;
  std::vector<TaskSpec> tasks;
  std::vector<GroupKind> groups;
  std::vector<std::string> targets{"de", "nl", "es", "fr", "it"};
  std::vector<std::string> eval_langs;  // defaults to en + targets
  bool translate_test = false;
  TranslationSettings translation;
  ModelKind model = ModelKind::baseline;
  std::string model_endpoint;
  BaselineHyperparams baseline;
  RemoteOptions remote;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t n_runs = 5;
  std::size_t workers = 1;
  std::vector<AnnotationSpec> annotations;
  std::string bleu_task;  // TaskSpec name; defaults to the first task
  std::vector<std::string> bleu_pivots;  // defaults to targets
  std::vector<PreservationSpec> preservation;
};

struct ValidationReport {
  std::vector<std::string> errors;
  bool ok() const { return errors.empty(); }
};

// Parses and validates. `config` is set whenever the file parsed, even if
// validation found errors. Relative paths resolve against the config file.
struct LoadedConfig {
  std::optional<PipelineConfig> config;
  ValidationReport report;
};

LoadedConfig load_config(const std::filesystem::path& path);
ValidationReport validate(const std::filesystem::path& path);

struct RunOptions {
  std::filesystem::path config;
  std::filesystem::path out;  // overrides the config's output directory
  std::int64_t seed_offset = 0;
};

enum ExitCode : int { kExitOk = 0, kExitInvalid = 1, kExitRuntime = 2 };

inline constexpr std::string_view kCommands[] = {"select", "translate", "assemble", "experiment", "evaluate",
                                                 "aggregate", "bleu", "preserve", "validate"};

// Runs one subcommand. Progress and errors go to `log`. Every command except
// `validate` writes <out>/manifests/<command>.json last, marked OK or FAILED.
int run_command(std::string_view command, const RunOptions& opts, std::ostream& log);

}  // namespace polyarg
