#include "polyarg/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <utility>

#include <fmt/format.h>
#include "json.hpp"

#include "polyarg/csv.hpp"
#include "polyarg/error.hpp"
#include "polyarg/text.hpp"

namespace polyarg {

ParseError::ParseError(std::string file, std::size_t row, std::string field, const std::string& what)
    : Error(fmt::format("{}: row {}{}: {}", file, row,
                        field.empty() ? std::string() : fmt::format(", field {}", field), what)),
      file_(std::move(file)),
      row_(row),
      field_(std::move(field)) {}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

std::string_view to_string(Stance s) {
  switch (s) {
    case Stance::pro: return "pro";
    case Stance::con: return "con";
    case Stance::neutral: return "neutral";
  }
  return "?";
}

std::string_view to_string(Source s) {
  switch (s) {
    case Source::arg_corpus: return "arg_corpus";
    case Source::evi_corpus: return "evi_corpus";
    case Source::vld_corpus: return "vld_corpus";
    case Source::human_generated: return "human_generated";
    case Source::machine_translated: return "machine_translated";
  }
  return "?";
}

std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::stance: return "stance";
    case TaskKind::quality: return "quality";
    case TaskKind::evidence: return "evidence";
  }
  return "?";
}

std::string_view to_string(CorpusKind k) {
  switch (k) {
    case CorpusKind::arg: return "arg";
    case CorpusKind::evi: return "evi";
    case CorpusKind::vld: return "vld";
    case CorpusKind::human: return "human";
    case CorpusKind::unlabeled: return "unlabeled";
  }
  return "?";
}

namespace {

template <typename E, std::size_t N>
std::optional<E> lookup(std::string_view s, const std::array<E, N>& values) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  return std::nullopt;
}

}  // namespace

std::optional<Split> parse_split(std::string_view s) { return lookup(s, kAllSplits); }

std::optional<Stance> parse_stance(std::string_view s) {
  return lookup(s, std::array{Stance::pro, Stance::con, Stance::neutral});
}

std::optional<Source> parse_source(std::string_view s) {
  return lookup(s, std::array{Source::arg_corpus, Source::evi_corpus, Source::vld_corpus,
                              Source::human_generated, Source::machine_translated});
}

std::optional<TaskKind> parse_task(std::string_view s) { return lookup(s, kAllTasks); }

std::optional<CorpusKind> parse_corpus_kind(std::string_view s) {
  if (s == "annotations-free") return CorpusKind::unlabeled;
  return lookup(s, std::array{CorpusKind::arg, CorpusKind::evi, CorpusKind::vld, CorpusKind::human,
                              CorpusKind::unlabeled});
}

std::optional<FileFormat> parse_file_format(std::string_view s) {
  if (s == "csv") return FileFormat::csv;
  if (s == "jsonl") return FileFormat::jsonl;
  return std::nullopt;
}

Source default_source(CorpusKind k) {
  switch (k) {
    case CorpusKind::arg: return Source::arg_corpus;
    case CorpusKind::evi: return Source::evi_corpus;
    case CorpusKind::vld: return Source::vld_corpus;
    case CorpusKind::human: return Source::human_generated;
    case CorpusKind::unlabeled: return Source::machine_translated;
  }
  return Source::arg_corpus;
}

FileFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? FileFormat::csv : FileFormat::jsonl;
}

void validate_record(const Record& r) {
  if (r.id.empty()) throw Error("record has an empty id");
  if (trim(r.text).empty()) throw Error(fmt::format("record {}: text is empty", r.id));
  if (trim(r.topic).empty()) throw Error(fmt::format("record {}: topic is empty", r.id));
  auto check = [&](const std::optional<double>& v, std::string_view name) {
    if (v && !(*v >= 0.0 && *v <= 1.0)) {
      throw Error(fmt::format("record {}: {} = {} outside [0,1]", r.id, name, *v));
    }
  };
  check(r.stance_conf, "stance_conf");
  check(r.quality_score, "quality_score");
  check(r.evidence_score, "evidence_score");
}

Dataset filter_split(const Dataset& ds, Split split) {
  Dataset out{ds.name, {}};
  for (const auto& r : ds.records) {
    if (r.split == split) out.records.push_back(r);
  }
  return out;
}

namespace {

const std::set<std::string, std::less<>> kKnownKeys{
    "id",           "topic_id",      "topic",          "text",   "lang",      "split",
    "stance_label", "stance_conf",   "quality_score",  "evidence_score", "source", "task_class"};

// Field accessor abstracting over CSV cells and JSON members. Absent and
// null/empty values both read as nullopt.
class RowReader {
 public:
  RowReader(std::string file, std::size_t row) : file_(std::move(file)), row_(row) {}

  [[noreturn]] void fail(const std::string& field, const std::string& what) const {
    throw ParseError(file_, row_, field, what);
  }

  std::string required_string(const std::string& field, std::optional<std::string> v) const {
    if (!v || trim(*v).empty()) fail(field, "missing or empty");
    return std::string(trim(*v));
  }

  std::optional<double> real(const std::string& field, std::optional<std::string> v) const {
    if (!v || trim(*v).empty()) return std::nullopt;
    auto s = trim(*v);
    double out = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size()) fail(field, fmt::format("not a number: '{}'", s));
    if (!(out >= 0.0 && out <= 1.0)) fail(field, fmt::format("value {} outside [0,1]", s));
    return out;
  }

  int integer(const std::string& field, std::optional<std::string> v) const {
    if (!v || trim(*v).empty()) fail(field, "missing or empty");
    auto s = trim(*v);
    int out = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size()) fail(field, fmt::format("not an integer: '{}'", s));
    return out;
  }

 private:
  std::string file_;
  std::size_t row_;
};

using Getter = std::function<std::optional<std::string>(std::string_view)>;

Record build_record(const RowReader& rd, const Getter& get, CorpusKind kind) {
  Record r;
  r.id = rd.required_string("id", get("id"));
  r.topic_id = rd.integer("topic_id", get("topic_id"));
  r.topic = rd.required_string("topic", get("topic"));
  r.text = rd.required_string("text", get("text"));
  r.lang = rd.required_string("lang", get("lang"));

  auto split = rd.required_string("split", get("split"));
  auto sp = parse_split(split);
  if (!sp) rd.fail("split", fmt::format("unknown split '{}'", split));
  r.split = *sp;

  if (auto v = get("source"); v && !trim(*v).empty()) {
    auto src = parse_source(trim(*v));
    if (!src) rd.fail("source", fmt::format("unknown source '{}'", *v));
    r.source = *src;
  } else {
    r.source = default_source(kind);
  }

  if (kind == CorpusKind::unlabeled) return r;

  if (auto v = get("stance_label"); v && !trim(*v).empty()) {
    auto st = parse_stance(trim(*v));
    if (!st) rd.fail("stance_label", fmt::format("unknown stance '{}'", *v));
    r.stance_label = *st;
  }
  r.stance_conf = rd.real("stance_conf", get("stance_conf"));
  r.quality_score = rd.real("quality_score", get("quality_score"));
  r.evidence_score = rd.real("evidence_score", get("evidence_score"));
  if (auto v = get("task_class"); v && !trim(*v).empty()) r.task_class = std::string(trim(*v));
  return r;
}

void warn(std::vector<std::string>* sink, std::string msg) {
  if (sink) {
    sink->push_back(std::move(msg));
  } else {
    std::cerr << "warning: " << msg << '\n';
  }
}

std::optional<std::string> json_field(const nlohmann::json& obj, std::string_view key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<long long>());
  if (it->is_number()) return fmt::format("{}", it->get<double>());
  if (it->is_boolean()) return it->get<bool>() ? "true" : "false";
  return it->dump();
}

}  // namespace

Dataset load_corpus(const std::filesystem::path& path, CorpusKind kind, FileFormat format,
                    std::vector<std::string>* warnings) {
  if (!std::filesystem::exists(path)) throw Error("corpus file not found: " + path.string());
  const std::string file = path.string();
  Dataset ds{path.stem().string(), {}};
  std::set<std::pair<std::string, std::string>> seen;
  std::set<std::string> warned;

  auto add = [&](Record r, const RowReader& rd) {
    if (!seen.emplace(r.id, r.lang).second) {
      rd.fail("id", fmt::format("duplicate (id, lang) = ({}, {})", r.id, r.lang));
    }
    ds.records.push_back(std::move(r));
  };

  if (format == FileFormat::csv) {
    auto rows = csv::read_file(path);
    if (rows.empty()) throw ParseError(file, 0, "", "missing header row");
    const auto& header = rows.front().fields;
    std::map<std::string, std::size_t, std::less<>> col;
    for (std::size_t i = 0; i < header.size(); ++i) {
      std::string name(trim(header[i]));
      if (!kKnownKeys.contains(name)) {
        warn(warnings, fmt::format("{}: ignoring unknown column '{}'", file, name));
      }
      col.emplace(std::move(name), i);
    }
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& fields = rows[i].fields;
      RowReader rd(file, i);
      if (fields.size() != header.size()) {
        rd.fail("", fmt::format("expected {} fields, found {}", header.size(), fields.size()));
      }
      Getter get = [&](std::string_view key) -> std::optional<std::string> {
        auto it = col.find(key);
        if (it == col.end()) return std::nullopt;
        return fields[it->second];
      };
      add(build_record(rd, get, kind), rd);
    }
    return ds;
  }

  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    RowReader rd(file, lineno);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      rd.fail("", std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) rd.fail("", "expected a JSON object");
    for (const auto& [key, _] : obj.items()) {
      if (!kKnownKeys.contains(key) && warned.insert(key).second) {
        warn(warnings, fmt::format("{}: ignoring unknown key '{}'", file, key));
      }
    }
    Getter get = [&](std::string_view key) { return json_field(obj, key); };
    add(build_record(rd, get, kind), rd);
  }
  return ds;
}

void write_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  for (const auto& r : ds.records) {
    nlohmann::ordered_json j;
    j["id"] = r.id;
    j["topic_id"] = r.topic_id;
    j["topic"] = r.topic;
    j["text"] = r.text;
    j["lang"] = r.lang;
    j["split"] = to_string(r.split);
    j["stance_label"] = r.stance_label ? nlohmann::json(to_string(*r.stance_label)) : nlohmann::json(nullptr);
    j["stance_conf"] = opt(r.stance_conf);
    j["quality_score"] = opt(r.quality_score);
    j["evidence_score"] = opt(r.evidence_score);
    j["source"] = to_string(r.source);
    if (r.task_class) j["task_class"] = *r.task_class;
    out << j.dump() << '\n';
  }
}

std::vector<std::string> SelectionThresholds::violations() const {
  std::vector<std::string> out;
  const std::pair<const char*, double> all[] = {
      {"stance_conf_min", stance_conf_min}, {"quality_high_min", quality_high_min},
      {"quality_low_max", quality_low_max}, {"evidence_pos_min", evidence_pos_min},
      {"evidence_neg_max", evidence_neg_max}, {"vld_pos_min", vld_pos_min},
      {"vld_neg_max", vld_neg_max}};
  for (auto [name, v] : all) {
    if (!(v >= 0.0 && v <= 1.0)) out.push_back(fmt::format("thresholds.{} = {} outside [0,1]", name, v));
  }
  if (!(quality_low_max < quality_high_min)) {
    out.emplace_back("thresholds.quality_low_max must be < thresholds.quality_high_min");
  }
  if (!(evidence_neg_max < evidence_pos_min)) {
    out.emplace_back("thresholds.evidence_neg_max must be < thresholds.evidence_pos_min");
  }
  if (!(vld_neg_max < vld_pos_min)) {
    out.emplace_back("thresholds.vld_neg_max must be < thresholds.vld_pos_min");
  }
  return out;
}

namespace {

enum class Verdict { keep, drop, skip };

Verdict judge_stance(const Record& r, const SelectionThresholds& th) {
  if (!r.stance_label) return Verdict::skip;
  // Sentence corpora carry no stance confidence; any non-neutral label counts.
  const bool label_only = r.source == Source::evi_corpus || r.source == Source::vld_corpus ||
                          (r.source == Source::machine_translated && !r.stance_conf);
  if (label_only) return *r.stance_label == Stance::neutral ? Verdict::drop : Verdict::keep;
  if (!r.stance_conf) return Verdict::skip;
  if (*r.stance_label == Stance::neutral) return Verdict::drop;
  return *r.stance_conf > th.stance_conf_min ? Verdict::keep : Verdict::drop;
}

std::pair<Verdict, std::string_view> judge_quality(const Record& r, const SelectionThresholds& th) {
  if (!r.quality_score) return {Verdict::skip, {}};
  if (*r.quality_score > th.quality_high_min) return {Verdict::keep, kQualityHigh};
  if (*r.quality_score < th.quality_low_max) return {Verdict::keep, kQualityLow};
  return {Verdict::drop, {}};
}

std::pair<Verdict, std::string_view> judge_evidence(const Record& r, const SelectionThresholds& th) {
  if (!r.evidence_score) return {Verdict::skip, {}};
  const bool vld = r.source == Source::vld_corpus;
  const double pos = vld ? th.vld_pos_min : th.evidence_pos_min;
  const double neg = vld ? th.vld_neg_max : th.evidence_neg_max;
  if (*r.evidence_score > pos) return {Verdict::keep, kEvidence};
  if (*r.evidence_score < neg) return {Verdict::keep, kNonEvidence};
  return {Verdict::drop, {}};
}

}  // namespace

SelectionResult select_for_task(const Dataset& ds, TaskKind task, const SelectionThresholds& th) {
  SelectionResult res;
  res.dataset.name = ds.name;
  for (const auto& r : ds.records) {
    Verdict v = Verdict::drop;
    std::string_view cls;
    switch (task) {
      case TaskKind::stance: v = judge_stance(r, th); break;
      case TaskKind::quality: std::tie(v, cls) = judge_quality(r, th); break;
      case TaskKind::evidence: std::tie(v, cls) = judge_evidence(r, th); break;
    }
    switch (v) {
      case Verdict::keep: {
        ++res.kept;
        Record kept = r;
        if (!cls.empty()) kept.task_class = std::string(cls);
        res.dataset.records.push_back(std::move(kept));
        break;
      }
      case Verdict::drop: ++res.dropped; break;
      case Verdict::skip: ++res.skipped; break;
    }
  }
  return res;
}

const StatsRow& StatsReport::row(std::string_view name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r;
  }
  throw Error(fmt::format("no stats row '{}'", name));
}

std::string StatsReport::to_csv() const {
  std::vector<std::string> header{"set", "topics"};
  header.insert(header.end(), columns.begin(), columns.end());
  std::string out = csv::join(header) + "\n";
  for (const auto& r : rows) {
    std::vector<std::string> fields{r.name, std::to_string(r.topics)};
    for (auto c : r.counts) fields.push_back(std::to_string(c));
    out += csv::join(fields) + "\n";
  }
  return out;
}

StatsReport corpus_stats(const Dataset& ds, TaskKind task) {
  StatsReport rep;
  rep.task = task;
  // Each entry: column name and the record predicate it counts.
  std::vector<std::function<bool(const Record&)>> preds;
  switch (task) {
    case TaskKind::stance:
      rep.columns = {"pro", "con"};
      preds = {[](const Record& r) { return r.stance_label == Stance::pro; },
               [](const Record& r) { return r.stance_label == Stance::con; }};
      break;
    case TaskKind::quality:
      rep.columns = {"args"};
      preds = {[](const Record& r) { return r.quality_score.has_value(); }};
      break;
    case TaskKind::evidence:
      rep.columns = {"evidence", "non_evidence"};
      preds = {[](const Record& r) { return r.task_class == kEvidence; },
               [](const Record& r) { return r.task_class == kNonEvidence; }};
      break;
  }

  StatsRow total{"total", 0, std::vector<std::size_t>(preds.size(), 0)};
  for (Split split : kAllSplits) {
    StatsRow row{std::string(to_string(split)), 0, std::vector<std::size_t>(preds.size(), 0)};
    std::set<int> topics;
    for (const auto& r : ds.records) {
      if (r.split != split) continue;
      bool counted = false;
      for (std::size_t c = 0; c < preds.size(); ++c) {
        if (preds[c](r)) {
          ++row.counts[c];
          counted = true;
        }
      }
      if (counted) topics.insert(r.topic_id);
    }
    row.topics = topics.size();
    total.topics += row.topics;
    for (std::size_t c = 0; c < preds.size(); ++c) total.counts[c] += row.counts[c];
    rep.rows.push_back(std::move(row));
  }
  rep.rows.push_back(std::move(total));
  return rep;
}

}  // namespace polyarg
