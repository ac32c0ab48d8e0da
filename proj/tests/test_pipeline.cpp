#include <cstdio>
#include <cstdlib>

#include "doctest.h"
#include "json.hpp"
#include "oracle.hpp"
#include "pipeline_fixture.hpp"
#include "polyarg/evaluation.hpp"

using namespace polyarg;
using testing::TempDir;
namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(testing::read_file(p)); }

bool has_error(const ValidationReport& r, std::string_view needle) {
  for (const auto& e : r.errors) {
    if (e.find(needle) != std::string::npos) return true;
  }
  return false;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(POLYARG_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("validate accepts the fixture config") {
  TempDir tmp;
  const auto cfg = fixtures::PipelineInputs{}.write(tmp.path());
  const auto report = validate(cfg);
  for (const auto& e : report.errors) MESSAGE(e);
  CHECK(report.ok());
  CHECK(fixtures::run("validate", cfg) == kExitOk);
  CHECK_FALSE(fs::exists(tmp / "out" / "manifests"));

  const auto loaded = load_config(cfg);
  REQUIRE(loaded.config);
  CHECK(loaded.config->output == tmp / "out");
  CHECK(loaded.config->corpora.at(CorpusKind::arg).path == tmp / "data" / "arg.jsonl");
  CHECK(loaded.config->eval_langs == std::vector<std::string>{"en", "de"});
  CHECK(loaded.config->baseline.hash_buckets == 65536);
}

TEST_CASE("validate reports every problem with its field") {
  TempDir tmp;
  fixtures::PipelineInputs in;
  in.extra = "n_runs: 3\n";
  auto cfg = in.write(tmp.path());
  // Duplicate key is a YAML error; rewrite instead.
  auto text = testing::read_file(cfg);
  text.replace(text.find("n_runs: 5\n"), 10, "");
  testing::write_file(cfg, text);
  auto r = validate(cfg);
  REQUIRE(r.errors.size() == 1);
  CHECK(r.errors[0] == "n_runs: n_runs is 3 but seeds lists 5 value(s)");
  CHECK(fixtures::run("validate", cfg) == kExitInvalid);
  CHECK(fixtures::run("select", cfg) == kExitInvalid);

  text = testing::read_file(cfg);
  text.replace(text.find("n_runs: 3\n"), 10, "");
  text.replace(text.find("data/arg.jsonl"), 14, "data/missing.jsonl");
  text += "groups_typo: [EN]\nthresholds:\n  stance_conf_min: 1.5\n";
  testing::write_file(cfg, text);
  r = validate(cfg);
  CHECK(has_error(r, "corpora.arg: path does not exist: " + (tmp / "data" / "missing.jsonl").string()));
  CHECK(has_error(r, "groups_typo"));
  CHECK(has_error(r, "thresholds.stance_conf_min"));

  testing::write_file(cfg, "output: [unclosed\n");
  CHECK_FALSE(validate(cfg).ok());
  testing::write_file(cfg, "- a\n- b\n");
  CHECK(has_error(validate(cfg), "mapping"));
}

TEST_CASE("group and target validation") {
  TempDir tmp;
  fixtures::PipelineInputs in;
  in.groups = {"EN", "DL"};
  in.targets = {"ja"};
  auto r = validate(in.write(tmp.path()));
  CHECK(has_error(r, "groups: DL with target ja"));
  in.groups = {"EN", "XL"};
  in.targets = {"en"};
  r = validate(in.write(tmp.path()));
  CHECK(has_error(r, "unknown group 'XL'"));
  CHECK(has_error(r, "targets[0]"));
}

TEST_CASE("environment overrides the model endpoint") {
  TempDir tmp;
  fixtures::PipelineInputs in;
  auto cfg = in.write(tmp.path());
  auto text = testing::read_file(cfg);
  text.replace(text.find("kind: baseline"), 14, "kind: remote");
  testing::write_file(cfg, text);
  CHECK(has_error(validate(cfg), "model.endpoint"));
  ::setenv(kModelEndpointEnv, "http://127.0.0.1:9/m", 1);
  const auto loaded = load_config(cfg);
  ::unsetenv(kModelEndpointEnv);
  CHECK(loaded.report.ok());
  CHECK(loaded.config->model_endpoint == "http://127.0.0.1:9/m");
}

TEST_CASE("select writes datasets, stats and a manifest") {
  TempDir tmp;
  const auto cfg = fixtures::PipelineInputs{}.write(tmp.path());
  std::string log;
  REQUIRE(fixtures::run("select", cfg, &log) == kExitOk);
  const fs::path out = tmp / "out";
  const auto sel = load_corpus(out / "selected" / "stance.jsonl", CorpusKind::arg, FileFormat::jsonl);
  CHECK(sel.size() == 2 * 150 + 8 + 2 * 50);
  const auto stats = testing::read_file(out / "stats" / "stance.csv");
  CHECK(stats.find("train,10,150,150") != std::string::npos);

  const auto m = read_json(out / "manifests" / "select.json");
  CHECK(m["status"] == "OK");
  CHECK(m["command"] == "select");
  CHECK(m["version"] == std::string(kVersion));
  CHECK(m["config"]["seeds"].size() == 5);
  CHECK(m["config"]["text"] == testing::read_file(cfg));
  CHECK(std::find(m["artifacts"].begin(), m["artifacts"].end(), "selected/stance.jsonl") != m["artifacts"].end());
}

TEST_CASE("select on a release-shaped argument corpus reports 49 training topics") {
  TempDir tmp;
  write_jsonl(fixtures::arg_corpus_published_shape(), tmp / "arg.jsonl");
  testing::write_file(tmp / "c.yaml",
                      "output: out\ncorpora:\n  arg: arg.jsonl\ntasks: [stance, quality]\ngroups: [EN]\n");
  REQUIRE(fixtures::run("select", tmp / "c.yaml") == kExitOk);
  const auto stance = testing::read_file(tmp / "out" / "stats" / "stance.csv");
  CHECK(stance.find("train,49,10162,9766") != std::string::npos);
  CHECK(stance.find("dev,7,1564,1497") != std::string::npos);
  CHECK(stance.find("test,15,3024,2952") != std::string::npos);
  const auto quality = testing::read_file(tmp / "out" / "stats" / "quality.csv");
  CHECK(quality.find("train,49,8373") != std::string::npos);
}

TEST_CASE("later stages require earlier ones and leave a FAILED manifest") {
  TempDir tmp;
  const auto cfg = fixtures::PipelineInputs{}.write(tmp.path());
  std::string log;
  CHECK(fixtures::run("translate", cfg, &log) == kExitRuntime);
  CHECK(log.find("select") != std::string::npos);
  const auto m = read_json(tmp / "out" / "manifests" / "translate.json");
  CHECK(m["status"] == "FAILED");
  CHECK_FALSE(m["error"].get<std::string>().empty());
  CHECK(m["artifacts"].empty());
}

TEST_CASE("a failure mid-stage keeps the artifacts already written") {
  TempDir tmp;
  fixtures::PipelineInputs in;
  in.extra = "bleu:\n  pivots: [de]\n";
  const auto cfg = in.write(tmp.path());
  REQUIRE(fixtures::run("select", cfg) == kExitOk);
  REQUIRE(fixtures::run("translate", cfg) == kExitOk);
  REQUIRE(fixtures::run("assemble", cfg) == kExitOk);
  // Corrupting the EN training set makes the EN cell fail after the
  // evaluation sets are written.
  testing::write_file(tmp / "out" / "train" / "stance" / "EN.jsonl", "{not json\n");
  std::string log;
  CHECK(fixtures::run("experiment", cfg, &log) == kExitRuntime);
  const auto m = read_json(tmp / "out" / "manifests" / "experiment.json");
  CHECK(m["status"] == "FAILED");
  CHECK_FALSE(m["artifacts"].empty());
  for (const auto& a : m["artifacts"]) CHECK(fs::exists(tmp / "out" / a.get<std::string>()));
}

TEST_CASE("full chain on the separable corpus") {
  TempDir tmp;
  const auto cfg = fixtures::PipelineInputs{}.write(tmp.path());
  for (const char* c : {"select", "translate", "assemble", "experiment", "evaluate", "bleu", "aggregate", "preserve"}) {
    std::string log;
    INFO(c);
    REQUIRE_MESSAGE(fixtures::run(c, cfg, &log) == kExitOk, log);
  }
  const fs::path out = tmp / "out";

  // Translation projects labels; the topic stays as is.
  const auto de = load_corpus(out / "translated" / "de" / "stance.jsonl", CorpusKind::arg, FileFormat::jsonl);
  const auto en = load_corpus(out / "selected" / "stance.jsonl", CorpusKind::arg, FileFormat::jsonl);
  REQUIRE(de.size() == en.size());
  for (std::size_t i = 0; i < de.size(); ++i) {
    CHECK(de.records[i].stance_label == en.records[i].stance_label);
    CHECK(de.records[i].topic == en.records[i].topic);
    CHECK(de.records[i].lang == "de");
  }

  // TL-de trains on German training data only.
  const auto tl = load_corpus(out / "train" / "stance" / "TL-de.jsonl", CorpusKind::arg, FileFormat::jsonl);
  CHECK(tl.size() == 300);
  for (const auto& r : tl.records) CHECK(r.lang == "de");

  const auto top = read_json(out / "experiments" / "manifest.json");
  CHECK(top["cells"].size() == 2);
  for (std::uint64_t s = 0; s < 5; ++s) {
    CHECK(fs::exists(out / "experiments" / "stance" / "EN" / "de" / prediction_file_name(s)));
    CHECK(fs::exists(out / "experiments" / "stance" / "EN" / "tt-de" / prediction_file_name(s)));
    CHECK(fs::exists(out / "experiments" / "stance" / "TL-de" / "de" / prediction_file_name(s)));
  }
  CHECK_FALSE(fs::exists(out / "experiments" / "stance" / "TL-de" / "en"));

  const auto report = testing::read_file(out / "report" / "report.csv");
  const auto en_de = fixtures::report_mean(report, "EN", "de");
  const auto tl_de = fixtures::report_mean(report, "TL", "de");
  const auto en_en = fixtures::report_mean(report, "EN", "en");
  const auto tt_de = fixtures::report_mean(report, "TT", "de");
  REQUIRE(en_de);
  REQUIRE(tl_de);
  REQUIRE(en_en);
  REQUIRE(tt_de);
  CHECK(*tl_de - *en_de >= 0.2);
  CHECK(*en_en > 0.9);
  // Mock back-translation restores the English text exactly.
  CHECK(*tt_de == doctest::Approx(*en_en));
  CHECK(fs::exists(out / "report" / "per_topic" / "stance" / "EN_en.csv"));
  CHECK(testing::read_file(out / "report" / "tables.txt").find("TL ") != std::string::npos);

  CHECK(testing::read_file(out / "bleu" / "bleu.csv") == "task,pivot,bleu,n\nstance,de,1.000000,100\n");

  // Aggregated labels match the annotation oracle.
  const auto js = fixtures::planted_stance_judgments();
  std::vector<oracle::Triple> triples;
  for (const auto& j : js) triples.emplace_back(j.item_id, j.annotator_id, j.answer);
  const auto o = oracle::agreement(triples, 50, 5);
  const auto expected = oracle::weighted_labels(triples, o.retained, 5);
  const auto labels = read_labels_jsonl(out / "annotations" / "stance_es" / "labels.jsonl");
  REQUIRE(labels.size() == expected.size());
  for (const auto& l : labels) CHECK(l.label == expected.at(l.item_id).label);
  const auto agreement = read_json(out / "annotations" / "stance_es" / "agreement.json");
  CHECK(agreement["retained"].size() == o.retained.size());
  CHECK(agreement["excluded"].empty());

  const fixtures::PreservationFixture pf;
  const auto pres = testing::read_file(out / "preserve" / "preservation.csv");
  const double r = oracle::pearson(pf.kept_x, pf.kept_y);
  const auto line = pres.substr(pres.find('\n') + 1);
  CHECK(line.starts_with("stance_es,stance,9,7,"));
  CHECK(std::abs(std::stod(line.substr(line.rfind(',') + 1)) - r) < 1e-9);
}

TEST_CASE("seed offset shifts the recorded seeds") {
  TempDir tmp;
  const auto cfg = fixtures::PipelineInputs{}.write(tmp.path());
  RunOptions o;
  o.config = cfg;
  o.out = tmp / "elsewhere";
  o.seed_offset = 10;
  std::ostringstream log;
  REQUIRE(run_command("select", o, log) == kExitOk);
  const auto m = read_json(tmp / "elsewhere" / "manifests" / "select.json");
  CHECK(m["config"]["seeds"] == nlohmann::json::array({10, 11, 12, 13, 14}));
  CHECK(m["config"]["seed_offset"] == 10);
  CHECK_FALSE(fs::exists(tmp / "out"));
}

TEST_CASE("command-line binary exit codes") {
  TempDir tmp;
  const auto cfg = fixtures::PipelineInputs{}.write(tmp.path());
  CHECK(run_cli("validate --config " + cfg.string()) == 0);
  CHECK(run_cli("translate --config " + cfg.string()) == 2);
  CHECK(run_cli("select --config " + cfg.string() + " --out " + (tmp / "o2").string()) == 0);
  CHECK(fs::exists(tmp / "o2" / "manifests" / "select.json"));
  testing::write_file(tmp / "bad.yaml", "output: out\nn_runs: 2\n");
  CHECK(run_cli("validate --config " + (tmp / "bad.yaml").string()) == 1);
  CHECK(run_cli("validate --config " + (tmp / "nope.yaml").string()) != 0);
  CHECK(run_cli("frobnicate") != 0);
}
