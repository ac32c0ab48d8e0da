#include "polyarg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "json.hpp"
#include "polyarg/annotation.hpp"
#include "polyarg/error.hpp"
#include "polyarg/evaluation.hpp"

namespace polyarg {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config parsing. Every problem is appended to `errors` as "field: message";
// parsing continues so one run of `validate` reports them all.
// ---------------------------------------------------------------------------

namespace {

class Parser {
 public:
  Parser(fs::path base, std::vector<std::string>& errors) : base_(std::move(base)), errors_(errors) {}

  void error(const std::string& field, const std::string& msg) { errors_.push_back(field + ": " + msg); }

  template <typename T>
  void scalar(const YAML::Node& node, const std::string& field, T& out) {
    if (!node) return;
    try {
      out = node.as<T>();
    } catch (const YAML::Exception&) {
      error(field, fmt::format("cannot read value '{}'", node.IsScalar() ? node.Scalar() : "<non-scalar>"));
    }
  }

  void path(const YAML::Node& node, const std::string& field, fs::path& out) {
    std::string s;
    scalar(node, field, s);
    if (!s.empty()) out = resolve(s);
  }

  fs::path resolve(const std::string& s) const {
    fs::path p(s);
    return p.is_absolute() ? p : (base_ / p).lexically_normal();
  }

  std::vector<std::string> strings(const YAML::Node& node, const std::string& field) {
    std::vector<std::string> out;
    if (!node) return out;
    if (!node.IsSequence()) {
      error(field, "expected a list");
      return out;
    }
    for (std::size_t i = 0; i < node.size(); ++i) {
      std::string s;
      scalar(node[i], fmt::format("{}[{}]", field, i), s);
      out.push_back(s);
    }
    return out;
  }

  void unknown_keys(const YAML::Node& node, const std::string& section, std::initializer_list<std::string_view> known) {
    if (!node || !node.IsMap()) return;
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (std::find(known.begin(), known.end(), key) == known.end()) {
        error(section.empty() ? key : section + "." + key, "unknown key");
      }
    }
  }

 private:
  fs::path base_;
  std::vector<std::string>& errors_;
};

void require_exists(const fs::path& p, const std::string& field, std::vector<std::string>& errors) {
  if (p.empty()) {
    errors.push_back(field + ": path is required");
  } else if (!fs::exists(p)) {
    errors.push_back(fmt::format("{}: path does not exist: {}", field, p.string()));
  }
}

CorpusKind default_corpus(TaskKind t) { return t == TaskKind::evidence ? CorpusKind::evi : CorpusKind::arg; }

void parse_corpora(Parser& ps, const YAML::Node& node, PipelineConfig& cfg) {
  if (!node) return;
  if (!node.IsMap()) {
    ps.error("corpora", "expected a mapping");
    return;
  }
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    const std::string field = "corpora." + key;
    auto kind = parse_corpus_kind(key);
    if (!kind) {
      ps.error(field, "unknown corpus kind");
      continue;
    }
    CorpusSpec spec;
    spec.kind = *kind;
    const YAML::Node& v = kv.second;
    if (v.IsScalar()) {
      ps.path(v, field, spec.path);
      spec.format = format_for_path(spec.path);
    } else if (v.IsMap()) {
      ps.unknown_keys(v, field, {"path", "format"});
      ps.path(v["path"], field + ".path", spec.path);
      spec.format = format_for_path(spec.path);
      if (v["format"]) {
        std::string f;
        ps.scalar(v["format"], field + ".format", f);
        if (auto ff = parse_file_format(f)) {
          spec.format = *ff;
        } else {
          ps.error(field + ".format", fmt::format("unknown format '{}'", f));
        }
      }
    } else {
      ps.error(field, "expected a path or a mapping");
      continue;
    }
    cfg.corpora[spec.kind] = spec;
  }
}

void parse_tasks(Parser& ps, const YAML::Node& node, PipelineConfig& cfg) {
  if (!node) return;
  if (!node.IsSequence()) {
    ps.error("tasks", "expected a list");
    return;
  }
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string field = fmt::format("tasks[{}]", i);
    const YAML::Node& v = node[i];
    TaskSpec spec;
    std::string task_name;
    if (v.IsScalar()) {
      task_name = v.Scalar();
    } else if (v.IsMap()) {
      ps.unknown_keys(v, field, {"task", "name", "corpus", "extra_train", "eval_human"});
      ps.scalar(v["task"], field + ".task", task_name);
    } else {
      ps.error(field, "expected a task name or a mapping");
      continue;
    }
    auto task = parse_task(task_name);
    if (!task) {
      ps.error(field + ".task", fmt::format("unknown task '{}'", task_name));
      continue;
    }
    spec.task = *task;
    spec.name = std::string(to_string(*task));
    spec.corpus = default_corpus(*task);
    if (v.IsMap()) {
      ps.scalar(v["name"], field + ".name", spec.name);
      if (v["corpus"]) {
        std::string c;
        ps.scalar(v["corpus"], field + ".corpus", c);
        if (auto k = parse_corpus_kind(c)) {
          spec.corpus = *k;
        } else {
          ps.error(field + ".corpus", fmt::format("unknown corpus kind '{}'", c));
        }
      }
      for (const auto& c : ps.strings(v["extra_train"], field + ".extra_train")) {
        if (auto k = parse_corpus_kind(c)) {
          spec.extra_train.push_back(*k);
        } else {
          ps.error(field + ".extra_train", fmt::format("unknown corpus kind '{}'", c));
        }
      }
      ps.scalar(v["eval_human"], field + ".eval_human", spec.eval_human);
    }
    cfg.tasks.push_back(std::move(spec));
  }
}

void parse_thresholds(Parser& ps, const YAML::Node& node, SelectionThresholds& th) {
  if (!node) return;
  ps.unknown_keys(node, "thresholds",
                  {"stance_conf_min", "quality_high_min", "quality_low_max", "evidence_pos_min", "evidence_neg_max",
                   "vld_pos_min", "vld_neg_max"});
  ps.scalar(node["stance_conf_min"], "thresholds.stance_conf_min", th.stance_conf_min);
  ps.scalar(node["quality_high_min"], "thresholds.quality_high_min", th.quality_high_min);
  ps.scalar(node["quality_low_max"], "thresholds.quality_low_max", th.quality_low_max);
  ps.scalar(node["evidence_pos_min"], "thresholds.evidence_pos_min", th.evidence_pos_min);
  ps.scalar(node["evidence_neg_max"], "thresholds.evidence_neg_max", th.evidence_neg_max);
  ps.scalar(node["vld_pos_min"], "thresholds.vld_pos_min", th.vld_pos_min);
  ps.scalar(node["vld_neg_max"], "thresholds.vld_neg_max", th.vld_neg_max);
}

void parse_translation(Parser& ps, const YAML::Node& node, PipelineConfig& cfg) {
  auto& t = cfg.translation;
  if (!node) return;
  ps.unknown_keys(node, "translation",
                  {"client", "endpoint", "cache", "batch_size", "max_in_flight", "max_attempts", "backoff_ms"});
  ps.scalar(node["client"], "translation.client", t.client);
  ps.scalar(node["endpoint"], "translation.endpoint", t.endpoint);
  ps.path(node["cache"], "translation.cache", t.cache);
  ps.scalar(node["batch_size"], "translation.batch_size", t.options.batch_size);
  ps.scalar(node["max_in_flight"], "translation.max_in_flight", t.options.max_in_flight);
  ps.scalar(node["max_attempts"], "translation.max_attempts", t.options.max_attempts);
  if (node["backoff_ms"]) {
    long ms = 0;
    ps.scalar(node["backoff_ms"], "translation.backoff_ms", ms);
    t.options.backoff = std::chrono::milliseconds(ms);
  }
}

void parse_model(Parser& ps, const YAML::Node& node, PipelineConfig& cfg) {
  if (!node) return;
  ps.unknown_keys(node, "model", {"kind", "endpoint", "baseline", "batch_size", "max_attempts", "backoff_ms",
                                  "timeout_s"});
  std::string kind = "baseline";
  ps.scalar(node["kind"], "model.kind", kind);
  if (kind == "baseline") {
    cfg.model = ModelKind::baseline;
  } else if (kind == "remote") {
    cfg.model = ModelKind::remote;
  } else {
    ps.error("model.kind", fmt::format("unknown model kind '{}' (baseline or remote)", kind));
  }
  ps.scalar(node["endpoint"], "model.endpoint", cfg.model_endpoint);
  ps.scalar(node["batch_size"], "model.batch_size", cfg.remote.batch_size);
  ps.scalar(node["max_attempts"], "model.max_attempts", cfg.remote.max_attempts);
  if (node["backoff_ms"]) {
    long ms = 0;
    ps.scalar(node["backoff_ms"], "model.backoff_ms", ms);
    cfg.remote.backoff = std::chrono::milliseconds(ms);
  }
  if (node["timeout_s"]) {
    long s = 0;
    ps.scalar(node["timeout_s"], "model.timeout_s", s);
    cfg.remote.timeout = std::chrono::seconds(s);
  }
  const YAML::Node b = node["baseline"];
  if (!b) return;
  auto& hp = cfg.baseline;
  ps.unknown_keys(b, "model.baseline", {"ngram_min", "ngram_max", "hash_buckets", "epochs_classification",
                                        "epochs_regression", "learning_rate", "l2"});
  ps.scalar(b["ngram_min"], "model.baseline.ngram_min", hp.ngram_min);
  ps.scalar(b["ngram_max"], "model.baseline.ngram_max", hp.ngram_max);
  ps.scalar(b["hash_buckets"], "model.baseline.hash_buckets", hp.hash_buckets);
  ps.scalar(b["epochs_classification"], "model.baseline.epochs_classification", hp.epochs_classification);
  ps.scalar(b["epochs_regression"], "model.baseline.epochs_regression", hp.epochs_regression);
  ps.scalar(b["learning_rate"], "model.baseline.learning_rate", hp.learning_rate);
  ps.scalar(b["l2"], "model.baseline.l2", hp.l2);
}

void parse_annotations(Parser& ps, const YAML::Node& node, PipelineConfig& cfg) {
  if (!node) return;
  if (!node.IsSequence()) {
    ps.error("annotations", "expected a list");
    return;
  }
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string field = fmt::format("annotations[{}]", i);
    const YAML::Node& v = node[i];
    AnnotationSpec a;
    a.name = fmt::format("annotations_{}", i);
    if (v.IsScalar()) {
      ps.path(v, field, a.path);
      a.name = a.path.stem().string();
    } else if (v.IsMap()) {
      ps.unknown_keys(v, field, {"name", "path", "min_common", "min_peers", "min_answers", "tq_min_accuracy",
                                 "max_high_fraction"});
      ps.path(v["path"], field + ".path", a.path);
      if (!a.path.empty()) a.name = a.path.stem().string();
      ps.scalar(v["name"], field + ".name", a.name);
      ps.scalar(v["min_common"], field + ".min_common", a.min_common);
      ps.scalar(v["min_peers"], field + ".min_peers", a.min_peers);
      ps.scalar(v["min_answers"], field + ".min_answers", a.min_answers);
      ps.scalar(v["tq_min_accuracy"], field + ".tq_min_accuracy", a.tq_min_accuracy);
      ps.scalar(v["max_high_fraction"], field + ".max_high_fraction", a.max_high_fraction);
    } else {
      ps.error(field, "expected a path or a mapping");
      continue;
    }
    cfg.annotations.push_back(std::move(a));
  }
}

void parse_preservation(Parser& ps, const YAML::Node& node, PipelineConfig& cfg) {
  if (!node) return;
  if (!node.IsSequence()) {
    ps.error("preservation", "expected a list");
    return;
  }
  for (std::size_t i = 0; i < node.size(); ++i) {
    const std::string field = fmt::format("preservation[{}]", i);
    const YAML::Node& v = node[i];
    if (!v.IsMap()) {
      ps.error(field, "expected a mapping");
      continue;
    }
    ps.unknown_keys(v, field, {"name", "task", "original", "translated", "min_stance_labels"});
    PreservationSpec p;
    p.name = fmt::format("preservation_{}", i);
    ps.scalar(v["name"], field + ".name", p.name);
    std::string task;
    ps.scalar(v["task"], field + ".task", task);
    if (auto t = parse_task(task)) {
      p.task = *t;
    } else {
      ps.error(field + ".task", fmt::format("unknown task '{}'", task));
    }
    ps.path(v["original"], field + ".original", p.original);
    ps.path(v["translated"], field + ".translated", p.translated);
    ps.scalar(v["min_stance_labels"], field + ".min_stance_labels", p.min_stance_labels);
    cfg.preservation.push_back(std::move(p));
  }
}

bool known_language(std::string_view lang) {
  const auto all = all_languages();
  return std::find(all.begin(), all.end(), lang) != all.end();
}

void check(PipelineConfig& cfg, std::vector<std::string>& errors) {
  auto err = [&](const std::string& field, const std::string& msg) { errors.push_back(field + ": " + msg); };

  for (const auto& [kind, spec] : cfg.corpora) require_exists(spec.path, "corpora." + std::string(to_string(kind)), errors);
  for (std::size_t i = 0; i < cfg.annotations.size(); ++i) {
    require_exists(cfg.annotations[i].path, fmt::format("annotations[{}].path", i), errors);
  }
  for (std::size_t i = 0; i < cfg.preservation.size(); ++i) {
    require_exists(cfg.preservation[i].original, fmt::format("preservation[{}].original", i), errors);
    require_exists(cfg.preservation[i].translated, fmt::format("preservation[{}].translated", i), errors);
  }
  for (const auto& v : cfg.thresholds.violations()) errors.push_back(v);
  for (const auto& v : cfg.baseline.violations()) errors.push_back("model." + v);

  if (cfg.tasks.empty()) err("tasks", "at least one task is required");
  std::set<std::string> names;
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    const auto& t = cfg.tasks[i];
    const std::string field = fmt::format("tasks[{}]", i);
    if (!names.insert(t.name).second) err(field + ".name", fmt::format("duplicate task name '{}'", t.name));
    if (t.name.empty() || t.name.find_first_of("/\\") != std::string::npos) {
      err(field + ".name", "must be a non-empty file-name-safe string");
    }
    if (!cfg.corpora.contains(t.corpus)) {
      err(field + ".corpus", fmt::format("corpus '{}' is not configured under corpora", to_string(t.corpus)));
    }
    for (auto k : t.extra_train) {
      if (!cfg.corpora.contains(k)) {
        err(field + ".extra_train", fmt::format("corpus '{}' is not configured under corpora", to_string(k)));
      }
    }
    if (t.eval_human && !cfg.corpora.contains(CorpusKind::human)) {
      err(field + ".eval_human", "requires corpora.human");
    }
  }

  if (cfg.groups.empty()) err("groups", "at least one language group is required");
  for (std::size_t i = 0; i < cfg.targets.size(); ++i) {
    const auto& t = cfg.targets[i];
    if (t == "en" || !known_language(t)) {
      err(fmt::format("targets[{}]", i), fmt::format("'{}' is not a non-English language code", t));
    }
  }
  for (auto g : cfg.groups) {
    if (!needs_target(g)) continue;
    if (cfg.targets.empty()) err("targets", fmt::format("group {} needs at least one target", to_string(g)));
    for (const auto& t : cfg.targets) {
      if (t == "en" || !known_language(t)) continue;
      try {
        resolve_group({g, t});
      } catch (const Error& e) {
        err("groups", fmt::format("{} with target {}: {}", to_string(g), t, e.what()));
      }
    }
  }
  for (std::size_t i = 0; i < cfg.eval_langs.size(); ++i) {
    if (!known_language(cfg.eval_langs[i])) {
      err(fmt::format("eval_langs[{}]", i), fmt::format("unknown language '{}'", cfg.eval_langs[i]));
    }
  }
  for (std::size_t i = 0; i < cfg.bleu_pivots.size(); ++i) {
    const auto& p = cfg.bleu_pivots[i];
    if (p == "en" || !known_language(p)) {
      err(fmt::format("bleu.pivots[{}]", i), fmt::format("'{}' is not a non-English language code", p));
    }
  }
  if (!cfg.bleu_task.empty() && !names.contains(cfg.bleu_task)) {
    err("bleu.task", fmt::format("no task named '{}'", cfg.bleu_task));
  }

  if (cfg.seeds.empty()) err("seeds", "at least one seed is required");
  if (cfg.n_runs != cfg.seeds.size()) {
    err("n_runs", fmt::format("n_runs is {} but seeds lists {} value(s)", cfg.n_runs, cfg.seeds.size()));
  }
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    err("seeds", "seeds must be distinct");
  }
  if (cfg.workers == 0) err("workers", "must be at least 1");
  if (cfg.model == ModelKind::remote && cfg.model_endpoint.empty()) {
    err("model.endpoint", fmt::format("required for the remote model (or set {})", kModelEndpointEnv));
  }
  if (cfg.remote.batch_size == 0) err("model.batch_size", "must be at least 1");
  if (cfg.remote.max_attempts < 1) err("model.max_attempts", "must be at least 1");

  const auto& tr = cfg.translation;
  if (tr.client != "mock" && tr.client != "http") {
    err("translation.client", fmt::format("unknown client '{}' (mock or http)", tr.client));
  }
  if (tr.client == "http" && tr.endpoint.empty()) {
    err("translation.endpoint", fmt::format("required for the http client (or set {})", kTranslationEndpointEnv));
  }
  if (tr.options.batch_size == 0) err("translation.batch_size", "must be at least 1");
  if (tr.options.max_in_flight == 0) err("translation.max_in_flight", "must be at least 1");
  if (tr.options.max_attempts < 1) err("translation.max_attempts", "must be at least 1");

  if (cfg.output.empty()) {
    err("output", "output directory is required");
  } else if (fs::exists(cfg.output) && !fs::is_directory(cfg.output)) {
    err("output", fmt::format("not a directory: {}", cfg.output.string()));
  }
}

}  // namespace

LoadedConfig load_config(const fs::path& path) {
  LoadedConfig out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("cannot read config file {}", path.string()));
  std::ostringstream buf;
  buf << in.rdbuf();

  YAML::Node root;
  try {
    root = YAML::Load(buf.str());
  } catch (const YAML::Exception& e) {
    out.report.errors.push_back(fmt::format("config: {}", e.what()));
    return out;
  }
  if (!root.IsMap()) {
    out.report.errors.push_back("config: top level must be a mapping");
    return out;
  }

  PipelineConfig cfg;
  cfg.source = fs::absolute(path);
  cfg.raw_text = buf.str();
  auto& errors = out.report.errors;
  Parser ps(cfg.source.parent_path(), errors);
  ps.unknown_keys(root, "", {"output", "corpora", "thresholds", "tasks", "groups", "targets", "eval_langs",
                             "translate_test", "translation", "model", "seeds", "n_runs", "workers", "annotations",
                             "bleu", "preservation"});

  ps.path(root["output"], "output", cfg.output);
  parse_corpora(ps, root["corpora"], cfg);
  parse_thresholds(ps, root["thresholds"], cfg.thresholds);
  parse_tasks(ps, root["tasks"], cfg);
  for (const auto& g : ps.strings(root["groups"], "groups")) {
    if (auto k = parse_group_kind(g)) {
      if (std::find(cfg.groups.begin(), cfg.groups.end(), *k) == cfg.groups.end()) cfg.groups.push_back(*k);
    } else {
      ps.error("groups", fmt::format("unknown group '{}'", g));
    }
  }
  if (root["targets"]) cfg.targets = ps.strings(root["targets"], "targets");
  cfg.eval_langs = ps.strings(root["eval_langs"], "eval_langs");
  ps.scalar(root["translate_test"], "translate_test", cfg.translate_test);
  parse_translation(ps, root["translation"], cfg);
  parse_model(ps, root["model"], cfg);
  if (root["seeds"]) {
    cfg.seeds.clear();
    if (!root["seeds"].IsSequence()) {
      ps.error("seeds", "expected a list");
    } else {
      for (std::size_t i = 0; i < root["seeds"].size(); ++i) {
        std::uint64_t s = 0;
        ps.scalar(root["seeds"][i], fmt::format("seeds[{}]", i), s);
        cfg.seeds.push_back(s);
      }
    }
  }
  cfg.n_runs = cfg.seeds.size();
  ps.scalar(root["n_runs"], "n_runs", cfg.n_runs);
  ps.scalar(root["workers"], "workers", cfg.workers);
  parse_annotations(ps, root["annotations"], cfg);
  if (const YAML::Node b = root["bleu"]) {
    ps.unknown_keys(b, "bleu", {"task", "pivots"});
    ps.scalar(b["task"], "bleu.task", cfg.bleu_task);
    cfg.bleu_pivots = ps.strings(b["pivots"], "bleu.pivots");
  }
  parse_preservation(ps, root["preservation"], cfg);
  if (cfg.eval_langs.empty()) {
    cfg.eval_langs.push_back("en");
    cfg.eval_langs.insert(cfg.eval_langs.end(), cfg.targets.begin(), cfg.targets.end());
  }

  if (const char* env = std::getenv(kModelEndpointEnv); env && *env) cfg.model_endpoint = env;
  if (const char* env = std::getenv(kTranslationEndpointEnv); env && *env) cfg.translation.endpoint = env;

  check(cfg, errors);
  out.config = std::move(cfg);
  return out;
}

ValidationReport validate(const fs::path& path) { return load_config(path).report; }

// ---------------------------------------------------------------------------
// Stages.
// ---------------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, std::string_view text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Pipeline {
 public:
  Pipeline(const PipelineConfig& cfg, fs::path out, std::ostream& log) : cfg_(cfg), out_(std::move(out)), log_(log) {}

  const std::vector<fs::path>& artifacts() const { return artifacts_; }

  void select();
  void translate();
  void assemble();
  void experiment();
  void evaluate();
  void aggregate();
  void bleu();
  void preserve();

 private:
  // Records `path` as an artifact of this run.
  void emit(const fs::path& path) { artifacts_.push_back(path); }
  void emit_text(const fs::path& path, std::string_view text) {
    write_text(path, text);
    emit(path);
  }
  void emit_jsonl(const Dataset& ds, const fs::path& path) {
    write_jsonl(ds, path);
    emit(path);
  }

  const Dataset& corpus(CorpusKind kind);
  Dataset load_stage(const fs::path& path, const char* producer) const;
  std::unique_ptr<TranslationClient> make_client() const;
  TranslationCache& cache();

  // Non-English languages a task needs: group members plus eval languages.
  std::vector<std::string> needed_langs() const;
  std::vector<std::string> eval_langs() const;
  std::vector<LanguageGroup> cells() const;

  fs::path selected_path(const TaskSpec& t) const { return out_ / "selected" / (t.name + ".jsonl"); }
  fs::path human_path(const TaskSpec& t) const { return out_ / "selected" / (t.name + "_human.jsonl"); }
  fs::path translated_path(const TaskSpec& t, std::string_view lang) const {
    return out_ / "translated" / std::string(lang) / (t.name + ".jsonl");
  }
  fs::path train_path(const TaskSpec& t, const LanguageGroup& g) const {
    return out_ / "train" / t.name / (g.label() + ".jsonl");
  }

  const PipelineConfig& cfg_;
  fs::path out_;
  std::ostream& log_;
  std::map<CorpusKind, Dataset> corpora_;
  std::unique_ptr<TranslationCache> cache_;
  std::vector<fs::path> artifacts_;
};

const Dataset& Pipeline::corpus(CorpusKind kind) {
  if (auto it = corpora_.find(kind); it != corpora_.end()) return it->second;
  const auto& spec = cfg_.corpora.at(kind);
  std::vector<std::string> warnings;
  auto ds = load_corpus(spec.path, kind, spec.format, &warnings);
  for (const auto& w : warnings) log_ << "warning: " << w << '\n';
  log_ << fmt::format("loaded {} {} records from {}\n", ds.size(), to_string(kind), spec.path.string());
  return corpora_.emplace(kind, std::move(ds)).first->second;
}

Dataset Pipeline::load_stage(const fs::path& path, const char* producer) const {
  if (!fs::exists(path)) throw Error(fmt::format("missing {} (run `{}` first)", path.string(), producer));
  return load_corpus(path, CorpusKind::arg, FileFormat::jsonl);
}

std::unique_ptr<TranslationClient> Pipeline::make_client() const {
  if (cfg_.translation.client == "http") return std::make_unique<HttpTranslationClient>(cfg_.translation.endpoint);
  return std::make_unique<MockTranslator>();
}

TranslationCache& Pipeline::cache() {
  if (!cache_) {
    fs::path p = cfg_.translation.cache;
    if (p.empty()) p = out_ / "cache" / "translations.tsv";
    fs::create_directories(p.parent_path());
    cache_ = std::make_unique<TranslationCache>(p);
  }
  return *cache_;
}

std::vector<std::string> Pipeline::eval_langs() const {
  std::vector<std::string> langs = cfg_.eval_langs;
  if (langs.empty()) {
    langs.push_back("en");
    langs.insert(langs.end(), cfg_.targets.begin(), cfg_.targets.end());
  }
  return langs;
}

std::vector<LanguageGroup> Pipeline::cells() const {
  std::vector<LanguageGroup> out;
  for (auto g : cfg_.groups) {
    if (!needs_target(g)) {
      out.push_back({g, ""});
      continue;
    }
    for (const auto& t : cfg_.targets) out.push_back({g, t});
  }
  return out;
}

std::vector<std::string> Pipeline::needed_langs() const {
  std::vector<std::string> langs;
  auto add = [&](const std::string& l) {
    if (l != "en" && std::find(langs.begin(), langs.end(), l) == langs.end()) langs.push_back(l);
  };
  for (const auto& c : cells()) {
    for (const auto& l : resolve_group(c)) add(l);
  }
  for (const auto& l : eval_langs()) add(l);
  return langs;
}

void Pipeline::select() {
  std::string summary = "task,corpus,kept,dropped,skipped\n";
  for (const auto& t : cfg_.tasks) {
    auto main = select_for_task(corpus(t.corpus), t.task, cfg_.thresholds);
    summary += fmt::format("{},{},{},{},{}\n", t.name, to_string(t.corpus), main.kept, main.dropped, main.skipped);
    emit_text(out_ / "stats" / (t.name + ".csv"), corpus_stats(main.dataset, t.task).to_csv());

    Dataset combined = std::move(main.dataset);
    combined.name = t.name;
    for (auto k : t.extra_train) {
      auto extra = select_for_task(corpus(k), t.task, cfg_.thresholds);
      summary += fmt::format("{},{},{},{},{}\n", t.name, to_string(k), extra.kept, extra.dropped, extra.skipped);
      emit_text(out_ / "stats" / fmt::format("{}_{}.csv", t.name, to_string(k)),
                corpus_stats(extra.dataset, t.task).to_csv());
      // Extra corpora only augment training.
      for (auto& r : extra.dataset.records) {
        if (r.split == Split::train) combined.records.push_back(std::move(r));
      }
    }
    emit_jsonl(combined, selected_path(t));
    log_ << fmt::format("select {}: {} records\n", t.name, combined.size());

    if (t.eval_human) {
      auto human = select_for_task(corpus(CorpusKind::human), t.task, cfg_.thresholds);
      summary += fmt::format("{},{},{},{},{}\n", t.name, "human", human.kept, human.dropped, human.skipped);
      human.dataset.name = t.name + "_human";
      emit_jsonl(human.dataset, human_path(t));
      emit_text(out_ / "stats" / (t.name + "_human.csv"), corpus_stats(human.dataset, t.task).to_csv());
    }
  }
  emit_text(out_ / "stats" / "selection_summary.csv", summary);
}

void Pipeline::translate() {
  auto client = make_client();
  for (const auto& t : cfg_.tasks) {
    const Dataset src = load_stage(selected_path(t), "select");
    for (const auto& lang : needed_langs()) {
      auto translated = translate_records(src, lang, *client, cache(), cfg_.translation.options);
      translated.name = t.name;
      emit_jsonl(translated, translated_path(t, lang));
      log_ << fmt::format("translate {} -> {}: {} records\n", t.name, lang, translated.size());
    }
  }
}

void Pipeline::assemble() {
  for (const auto& t : cfg_.tasks) {
    std::map<std::string, Dataset> per_lang;
    per_lang["en"] = filter_split(load_stage(selected_path(t), "select"), Split::train);
    for (const auto& lang : needed_langs()) {
      per_lang[lang] = filter_split(load_stage(translated_path(t, lang), "translate"), Split::train);
    }
    for (const auto& g : cells()) {
      auto ds = assemble_group(per_lang, g);
      emit_jsonl(ds, train_path(t, g));
      log_ << fmt::format("assemble {} {}: {} records\n", t.name, g.label(), ds.size());
    }
  }
}

void Pipeline::experiment() {
  ExperimentConfig base;
  base.seeds = cfg_.seeds;
  base.model = cfg_.model;
  base.baseline = cfg_.baseline;
  base.remote_endpoint = cfg_.model_endpoint;
  base.remote = cfg_.remote;
  base.workers = cfg_.workers;

  ojson top;
  top["cells"] = ojson::array();
  std::unique_ptr<TranslationClient> client;
  for (const auto& t : cfg_.tasks) {
    const fs::path root = out_ / "experiments" / t.name;
    const Dataset selected = load_stage(selected_path(t), "select");

    // Eval sets are materialized once per task so every cell reads the same files.
    std::vector<EvalSet> evals;
    auto add_eval = [&](std::string name, Dataset data) {
      const fs::path p = root / "eval" / (name + ".jsonl");
      data.name = name;
      write_jsonl(data, p);
      emit(p);
      evals.push_back({std::move(name), fs::relative(p, out_).generic_string(), std::move(data)});
    };
    for (const auto& lang : eval_langs()) {
      if (lang == "en") {
        add_eval("en", filter_split(selected, Split::test));
      } else {
        add_eval(lang, filter_split(load_stage(translated_path(t, lang), "translate"), Split::test));
      }
    }
    if (cfg_.translate_test) {
      if (!client) client = make_client();
      for (const auto& lang : eval_langs()) {
        if (lang == "en") continue;
        const Dataset pseudo = filter_split(load_stage(translated_path(t, lang), "translate"), Split::test);
        add_eval("tt-" + lang, translate_records(pseudo, "en", *client, cache(), cfg_.translation.options));
      }
    }
    if (t.eval_human) {
      const Dataset human = load_stage(human_path(t), "select");
      std::set<std::string> langs;
      for (const auto& r : human.records) langs.insert(r.lang);
      for (const auto& lang : langs) {
        Dataset part;
        for (const auto& r : human.records) {
          if (r.lang == lang && r.split == Split::test) part.records.push_back(r);
        }
        if (!part.empty()) add_eval("human-" + lang, std::move(part));
      }
    }

    for (const auto& g : cells()) {
      std::vector<EvalSet> chosen;
      for (const auto& e : evals) {
        // Target-dependent groups are evaluated on their own target only.
        const bool keep = !needs_target(g.kind) || e.lang == g.target || e.lang == "human-" + g.target;
        const bool tt = e.lang.starts_with("tt-");
        if (keep && (!tt || g.kind == GroupKind::EN)) chosen.push_back(e);
      }
      ExperimentConfig ec = base;
      ec.task = t.task;
      ec.group = g.label();
      const Dataset train = load_stage(train_path(t, g), "assemble");
      const fs::path dir = root / g.label();
      auto res = run_experiment(ec, train, chosen, dir);
      for (const auto& f : res.files) emit(f.path);
      emit(res.manifest);
      log_ << fmt::format("experiment {} {}: {} prediction files\n", t.name, g.label(), res.files.size());

      ojson c;
      c["name"] = t.name;
      c["task"] = to_string(t.task);
      c["group"] = to_string(g.kind);
      c["target"] = g.target;
      c["label"] = g.label();
      c["manifest"] = fs::relative(res.manifest, out_).generic_string();
      top["cells"].push_back(std::move(c));
    }
  }
  const fs::path p = out_ / "experiments" / "manifest.json";
  emit_text(p, top.dump(2) + "\n");
}

void Pipeline::evaluate() {
  const fs::path top_path = out_ / "experiments" / "manifest.json";
  if (!fs::exists(top_path)) throw Error(fmt::format("missing {} (run `experiment` first)", top_path.string()));
  const auto top = nlohmann::json::parse(read_text(top_path));

  struct TopicRun {
    std::string name, group, lang;
    std::map<int, std::vector<double>> values;
    std::map<int, std::size_t> n;
    std::map<int, bool> single;
    std::map<int, std::string> names;
  };
  EvalReport report;
  std::vector<TopicRun> topic_runs;
  std::map<std::string, TaskKind> task_of;

  for (const auto& cell : top.at("cells")) {
    const std::string name = cell.at("name");
    const auto task = parse_task(cell.at("task").get<std::string>()).value();
    task_of[name] = task;
    const fs::path mpath = out_ / cell.at("manifest").get<std::string>();
    const auto m = nlohmann::json::parse(read_text(mpath));
    const std::string model = m.at("model");
    for (const auto& es : m.at("eval_sets")) {
      std::string lang = es.at("lang");
      std::string group = cell.at("group");
      if (lang.starts_with("tt-")) {
        group = "TT";
        lang = lang.substr(3);
      }
      const Dataset gold = load_stage(out_ / es.at("path").get<std::string>(), "experiment");
      std::vector<double> values;
      TopicRun tr{name, group, lang, {}, {}, {}, {}};
      for (const auto& f : es.at("files")) {
        const auto rows = read_predictions(mpath.parent_path() / f.get<std::string>());
        std::map<std::string, const PredictionRow*> by_id;
        for (const auto& r : rows) by_id.emplace(r.id, &r);
        if (by_id.size() != gold.size()) {
          throw Error(fmt::format("{}: {} predictions for {} gold records", f.get<std::string>(), by_id.size(),
                                  gold.size()));
        }
        auto pred_of = [&](const Record& r) -> const PredictionRow& {
          auto it = by_id.find(r.id);
          if (it == by_id.end()) throw Error(fmt::format("no prediction for record {}", r.id));
          return *it->second;
        };
        if (is_classification(task)) {
          std::vector<std::string> g, p;
          std::vector<int> topics;
          for (const auto& r : gold.records) {
            g.push_back(gold_class(r, task));
            p.push_back(pred_of(r).label);
            topics.push_back(r.topic_id);
            tr.names.emplace(r.topic_id, r.topic);
          }
          values.push_back(macro_f1(g, p));
          for (const auto& ts : per_topic(g, p, topics)) {
            tr.values[ts.topic_id].push_back(ts.value);
            tr.n[ts.topic_id] = ts.n;
            tr.single[ts.topic_id] = ts.single_class_gold;
          }
        } else {
          std::vector<double> g, p;
          for (const auto& r : gold.records) {
            g.push_back(gold_value(r, task));
            p.push_back(pred_of(r).score);
          }
          values.push_back(pearson(g, p));
        }
      }
      if (values.empty()) continue;
      report.entries.push_back({model, group, lang, name, metric_for(task), aggregate_runs(values)});
      if (is_classification(task)) topic_runs.push_back(std::move(tr));
    }
  }

  emit_text(out_ / "report" / "report.csv", report.to_csv());
  std::string tables;
  for (const auto& t : cfg_.tasks) {
    if (!task_of.contains(t.name)) continue;
    if (!tables.empty()) tables += '\n';
    tables += report.render_table(t.name, metric_for(t.task));
  }
  emit_text(out_ / "report" / "tables.txt", tables);

  // Per-topic tables share the topic order of the English-trained model on
  // the English test set, best topic first.
  auto mean_of = [](const std::vector<double>& v) { return aggregate_runs(v).mean; };
  for (const auto& t : cfg_.tasks) {
    std::vector<int> order;
    for (const auto& tr : topic_runs) {
      if (tr.name != t.name || tr.group != "EN" || tr.lang != "en") continue;
      std::vector<std::pair<double, int>> ranked;
      for (const auto& [id, v] : tr.values) ranked.emplace_back(mean_of(v), id);
      std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      for (const auto& [_, id] : ranked) order.push_back(id);
    }
    for (const auto& tr : topic_runs) {
      if (tr.name != t.name) continue;
      std::vector<TopicScore> scores;
      for (int id : order) {
        if (tr.values.contains(id)) scores.push_back({id, mean_of(tr.values.at(id)), tr.n.at(id), tr.single.at(id)});
      }
      for (const auto& [id, v] : tr.values) {
        if (std::find(order.begin(), order.end(), id) == order.end()) {
          scores.push_back({id, mean_of(v), tr.n.at(id), tr.single.at(id)});
        }
      }
      emit_text(out_ / "report" / "per_topic" / t.name / fmt::format("{}_{}.csv", tr.group, tr.lang),
                per_topic_csv(scores, tr.names));
    }
  }
  log_ << fmt::format("evaluate: {} report entries\n", report.entries.size());
}

void Pipeline::aggregate() {
  if (cfg_.annotations.empty()) throw Error("no annotation files configured");
  for (const auto& spec : cfg_.annotations) {
    const fs::path dir = out_ / "annotations" / spec.name;
    const AnnotationSet raw = load_annotations(spec.path);
    auto tq = filter_by_test_questions(raw, spec.tq_min_accuracy);
    std::optional<FilterResult> prior;
    if (raw.question() == Question::quality) prior = filter_by_quality_prior(tq.set, spec.max_high_fraction);
    const AnnotationSet& filtered = prior ? prior->set : tq.set;

    const auto agreement = annotator_agreement(filtered, spec.min_common, spec.min_peers);
    const auto labels = aggregate_wa(filtered, agreement, spec.min_answers);
    write_labels_jsonl(labels, dir / "labels.jsonl");
    emit(dir / "labels.jsonl");

    ojson a;
    a["question"] = to_string(raw.question());
    a["min_common"] = spec.min_common;
    a["min_peers"] = spec.min_peers;
    a["removed_by_test_questions"] = tq.removed;
    a["without_test_questions"] = tq.without_test_questions;
    a["removed_by_quality_prior"] = prior ? prior->removed : std::vector<std::string>{};
    ojson per = ojson::object();
    for (const auto& [ann, k] : agreement.per_annotator_avg_kappa) per[ann] = k;
    a["retained"] = per;
    ojson excl = ojson::object();
    for (const auto& [ann, r] : agreement.excluded) excl[ann] = to_string(r);
    a["excluded"] = excl;
    ojson peers = ojson::object();
    for (const auto& [ann, n] : agreement.qualifying_peers) peers[ann] = n;
    a["qualifying_peers"] = peers;
    a["overall_iaa"] = agreement.overall_iaa ? ojson(*agreement.overall_iaa) : ojson(nullptr);
    emit_text(dir / "agreement.json", a.dump(2) + "\n");

    const auto st = annotation_stats(filtered, spec.min_common, spec.min_peers, spec.min_answers);
    emit_text(dir / "stats.csv",
              fmt::format("question,items,labeled,iaa,positive_fraction\n{},{},{},{},{:.6f}\n", to_string(st.question),
                          st.items, st.labeled, st.iaa ? fmt::format("{:.6f}", *st.iaa) : "", st.positive_fraction));
    log_ << fmt::format("aggregate {}: {} labels, {} annotators retained\n", spec.name, labels.size(),
                        agreement.per_annotator_avg_kappa.size());
  }
}

void Pipeline::bleu() {
  const TaskSpec* spec = &cfg_.tasks.front();
  for (const auto& t : cfg_.tasks) {
    if (t.name == cfg_.bleu_task) spec = &t;
  }
  Dataset test = filter_split(load_stage(selected_path(*spec), "select"), Split::test);
  if (test.empty()) throw Error(fmt::format("task {} has no test records to back-translate", spec->name));
  auto client = make_client();
  const auto& pivots = cfg_.bleu_pivots.empty() ? cfg_.targets : cfg_.bleu_pivots;
  std::string csv_out = "task,pivot,bleu,n\n";
  EvalReport report;
  for (const auto& pivot : pivots) {
    const auto pairs = back_translate(test, pivot, *client, cache(), cfg_.translation.options);
    std::vector<std::string> cand, ref;
    for (const auto& p : pairs) {
      cand.push_back(p.round_trip);
      ref.push_back(p.original);
    }
    const double b = corpus_bleu(cand, ref);
    csv_out += fmt::format("{},{},{:.6f},{}\n", spec->name, pivot, b, pairs.size());
    log_ << fmt::format("bleu {} via {}: {:.4f}\n", spec->name, pivot, b);
  }
  emit_text(out_ / "bleu" / "bleu.csv", csv_out);
}

void Pipeline::preserve() {
  if (cfg_.preservation.empty()) throw Error("no preservation pairs configured");
  std::string csv_out = "name,task,matched,used,pearson\n";
  for (const auto& p : cfg_.preservation) {
    const auto orig = read_labels_jsonl(p.original);
    const auto trans = read_labels_jsonl(p.translated);
    const auto r = label_preservation(orig, trans, p.task, cfg_.thresholds, p.min_stance_labels);
    // Shortest round-trip representation keeps the value exact.
    csv_out += fmt::format("{},{},{},{},{}\n", p.name, to_string(p.task), r.matched, r.used, r.pearson);
    log_ << fmt::format("preserve {}: r = {:.4f} over {} items\n", p.name, r.pearson, r.used);
  }
  emit_text(out_ / "preserve" / "preservation.csv", csv_out);
}

ojson config_snapshot(const PipelineConfig& cfg, const fs::path& out, std::int64_t seed_offset) {
  ojson j;
  j["source"] = cfg.source.string();
  j["text"] = cfg.raw_text;
  j["output"] = out.string();
  j["seed_offset"] = seed_offset;
  j["seeds"] = cfg.seeds;
  j["model"] = to_string(cfg.model);
  if (cfg.model == ModelKind::remote) j["model_endpoint"] = cfg.model_endpoint;
  j["translation_client"] = cfg.translation.client;
  if (cfg.translation.client == "http") j["translation_endpoint"] = cfg.translation.endpoint;
  return j;
}

}  // namespace

int run_command(std::string_view command, const RunOptions& opts, std::ostream& log) {
  if (std::find(std::begin(kCommands), std::end(kCommands), command) == std::end(kCommands)) {
    log << fmt::format("error: unknown command '{}'\n", command);
    return kExitInvalid;
  }
  LoadedConfig loaded;
  try {
    loaded = load_config(opts.config);
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitInvalid;
  }
  if (loaded.config && !opts.out.empty()) {
    // --out replaces a missing or invalid output entry.
    auto& errs = loaded.report.errors;
    errs.erase(std::remove_if(errs.begin(), errs.end(), [](const std::string& e) { return e.starts_with("output:"); }),
               errs.end());
    loaded.config->output = fs::absolute(opts.out);
    if (fs::exists(opts.out) && !fs::is_directory(opts.out)) {
      errs.push_back(fmt::format("--out: not a directory: {}", opts.out.string()));
    }
  }
  for (const auto& e : loaded.report.errors) log << "error: " << e << '\n';
  if (!loaded.report.ok()) return kExitInvalid;
  if (command == "validate") {
    log << "config is valid\n";
    return kExitOk;
  }

  PipelineConfig cfg = std::move(*loaded.config);
  if (opts.seed_offset != 0) {
    for (auto& s : cfg.seeds) s = static_cast<std::uint64_t>(static_cast<std::int64_t>(s) + opts.seed_offset);
  }
  const fs::path out = cfg.output;
  try {
    fs::create_directories(out);
  } catch (const std::exception& e) {
    log << fmt::format("error: output: cannot create {}: {}\n", out.string(), e.what());
    return kExitInvalid;
  }

  ojson manifest;
  manifest["command"] = command;
  manifest["version"] = kVersion;
  manifest["started"] = utc_timestamp();
  manifest["config"] = config_snapshot(cfg, out, opts.seed_offset);

  Pipeline p(cfg, out, log);
  int code = kExitOk;
  try {
    if (command == "select") {
      p.select();
    } else if (command == "translate") {
      p.translate();
    } else if (command == "assemble") {
      p.assemble();
    } else if (command == "experiment") {
      p.experiment();
    } else if (command == "evaluate") {
      p.evaluate();
    } else if (command == "aggregate") {
      p.aggregate();
    } else if (command == "bleu") {
      p.bleu();
    } else if (command == "preserve") {
      p.preserve();
    }
    manifest["status"] = "OK";
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    manifest["status"] = "FAILED";
    manifest["error"] = e.what();
    code = kExitRuntime;
  }
  manifest["finished"] = utc_timestamp();
  manifest["artifacts"] = ojson::array();
  for (const auto& a : p.artifacts()) manifest["artifacts"].push_back(fs::relative(a, out).generic_string());
  try {
    write_text(out / "manifests" / (std::string(command) + ".json"), manifest.dump(2) + "\n");
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    code = kExitRuntime;
  }
  return code;
}

}  // namespace polyarg
