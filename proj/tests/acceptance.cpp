// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>

#include <fmt/ranges.h>

#include "json.hpp"
#include "oracle.hpp"
#include "pipeline_fixture.hpp"
#include "polyarg/annotation.hpp"
#include "polyarg/evaluation.hpp"
#include "polyarg/translation.hpp"

using namespace polyarg;
namespace fs = std::filesystem;

namespace {

// Collects failed expectations for one criterion.
struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, std::string what) {
    if (!ok) failures.push_back(std::move(what));
  }
  void near(double got, double want, double tol, const std::string& what) {
    expect(std::abs(got - want) <= tol, fmt::format("{}: got {:.12g}, want {:.12g}", what, got, want));
  }
};

std::vector<std::string> strs(std::initializer_list<int> xs) {
  std::vector<std::string> out;
  for (int x : xs) out.push_back(std::to_string(x));
  return out;
}

void metric_oracles(Check& c) {
  const auto a = strs({1, 1, 1, 1, 0, 0, 0, 0, 1, 0});
  const auto b = strs({1, 1, 0, 1, 0, 0, 1, 0, 1, 0});
  const auto ok = oracle::kappa(a, b);
  c.expect(ok.has_value(), "oracle kappa undefined");
  if (ok) c.near(*ok, 0.6, 1e-9, "oracle kappa");
  const auto k = cohen_kappa(a, b);
  c.expect(k.has_value(), "kappa undefined");
  if (k) c.near(*k, 0.6, 1e-9, "kappa");

  const std::vector<std::string> g{"P", "P", "P", "N", "N"}, p{"P", "N", "P", "N", "P"};
  c.near(oracle::macro_f1(g, p), 7.0 / 12.0, 1e-9, "oracle macro_f1");
  c.near(macro_f1(g, p), 7.0 / 12.0, 1e-9, "macro_f1");

  const std::vector<double> x{1, 2, 3, 4}, y{1, 3, 2, 4};
  c.near(oracle::pearson(x, y), 0.8, 1e-9, "oracle pearson");
  c.near(pearson(x, y), 0.8, 1e-9, "pearson");

  const std::vector<std::string> cand{"a b c d"}, ref{"a b c d e"};
  c.near(oracle::bleu(cand, ref), std::exp(1.0 - 5.0 / 4.0), 1e-6, "oracle bleu");
  c.near(corpus_bleu(cand, ref), std::exp(1.0 - 5.0 / 4.0), 1e-6, "bleu");
}

void expect_rows(Check& c, const StatsReport& rep, const std::vector<std::vector<std::size_t>>& want,
                 const std::string& what) {
  c.expect(rep.rows.size() >= want.size(), what + ": row count");
  for (std::size_t i = 0; i < std::min(rep.rows.size(), want.size()); ++i) {
    std::vector<std::size_t> got{rep.rows[i].topics};
    got.insert(got.end(), rep.rows[i].counts.begin(), rep.rows[i].counts.end());
    c.expect(got == want[i], fmt::format("{}: {} row {}", what, rep.rows[i].name, fmt::join(got, "/")));
  }
}

// Records on both sides of every threshold; exactly the strict side is kept.
void threshold_boundaries(Check& c) {
  const SelectionThresholds th;
  auto rec = [](std::string id) { return fixtures::record(std::move(id), 1, "some text"); };
  Dataset arg{"arg", {}};
  for (double conf : {0.75, std::nextafter(0.75, 1.0)}) {
    Record r = rec(fmt::format("s{}", conf));
    r.stance_label = Stance::pro;
    r.stance_conf = conf;
    arg.records.push_back(r);
  }
  const auto st = select_for_task(arg, TaskKind::stance, th);
  c.expect(st.kept == 1 && st.dataset.records[0].stance_conf > 0.75, "stance_conf_min is not strict");

  Dataset q{"arg", {}};
  for (double s : {0.9, std::nextafter(0.9, 1.0), 0.4, std::nextafter(0.4, 0.0), 0.65}) {
    Record r = rec(fmt::format("q{}", s));
    r.quality_score = s;
    q.records.push_back(r);
  }
  const auto qs = select_for_task(q, TaskKind::quality, th);
  c.expect(qs.kept == 2, fmt::format("quality boundaries kept {} of 5, want 2", qs.kept));

  Dataset e{"evi", {}};
  for (double s : {0.7, std::nextafter(0.7, 1.0), 0.3, std::nextafter(0.3, 0.0)}) {
    Record r = rec(fmt::format("e{}", s));
    r.source = Source::evi_corpus;
    r.evidence_score = s;
    e.records.push_back(r);
  }
  const auto es = select_for_task(e, TaskKind::evidence, th);
  c.expect(es.kept == 2, fmt::format("evidence boundaries kept {} of 4, want 2", es.kept));

  Dataset v{"vld", {}};
  for (double s : {0.95, std::nextafter(0.95, 1.0), 0.05, std::nextafter(0.05, 0.0)}) {
    Record r = rec(fmt::format("v{}", s));
    r.source = Source::vld_corpus;
    r.evidence_score = s;
    v.records.push_back(r);
  }
  const auto vs = select_for_task(v, TaskKind::evidence, th);
  c.expect(vs.kept == 2, fmt::format("vld boundaries kept {} of 4, want 2", vs.kept));
}

void data_selection(Check& c) {
  const SelectionThresholds th;
  // Released corpora, when provided, must reproduce the published counts.
  bool real = false;
  if (const char* p = std::getenv("POLYARG_ARG_CORPUS"); p && fs::exists(p)) {
    real = true;
    const auto ds = load_corpus(p, CorpusKind::arg, format_for_path(p));
    const auto stance = corpus_stats(select_for_task(ds, TaskKind::stance, th).dataset, TaskKind::stance);
    expect_rows(c, stance, {{49, 10162, 9766}, {7, 1564, 1497}, {15, 3024, 2952}}, "arg stance");
    const auto quality = corpus_stats(select_for_task(ds, TaskKind::quality, th).dataset, TaskKind::quality);
    expect_rows(c, quality, {{49, 8373}, {7, 1329}, {15, 2449}}, "arg quality");
  }
  if (const char* p = std::getenv("POLYARG_EVI_CORPUS"); p && fs::exists(p)) {
    real = true;
    const auto ds = load_corpus(p, CorpusKind::evi, format_for_path(p));
    const auto ev = corpus_stats(select_for_task(ds, TaskKind::evidence, th).dataset, TaskKind::evidence);
    c.expect(!ev.rows.empty() && ev.rows[0].counts.size() >= 2 && ev.rows[0].counts[0] == 3522 &&
                 ev.rows[0].counts[1] == 14275,
             "evi train counts");
  }
  if (const char* p = std::getenv("POLYARG_VLD_CORPUS"); p && fs::exists(p)) {
    real = true;
    const auto ds = load_corpus(p, CorpusKind::vld, format_for_path(p));
    const auto sel = select_for_task(ds, TaskKind::evidence, th);
    std::size_t pos = 0;
    for (const auto& r : sel.dataset.records) pos += r.task_class == kEvidence;
    c.expect(sel.kept == 52037 && pos == 19406, fmt::format("vld kept {} positive {}", sel.kept, pos));
  }
  if (!real) std::cout << "  (released corpora not provided; using boundary and shaped fixtures)\n";

  threshold_boundaries(c);
  const auto arg = fixtures::arg_corpus_published_shape();
  expect_rows(c, corpus_stats(select_for_task(arg, TaskKind::stance, th).dataset, TaskKind::stance),
              {{49, 10162, 9766}, {7, 1564, 1497}, {15, 3024, 2952}}, "shaped arg stance");
  expect_rows(c, corpus_stats(select_for_task(arg, TaskKind::quality, th).dataset, TaskKind::quality),
              {{49, 8373}, {7, 1329}, {15, 2449}}, "shaped arg quality");
  const auto evi = corpus_stats(select_for_task(fixtures::evi_corpus_published_shape(), TaskKind::evidence, th).dataset,
                                TaskKind::evidence);
  c.expect(!evi.rows.empty() && evi.rows[0].counts.size() >= 2 && evi.rows[0].counts[0] == 3522 &&
               evi.rows[0].counts[1] == 14275,
           "shaped evi train counts");
  const auto vld = select_for_task(fixtures::vld_corpus(), TaskKind::evidence, th);
  std::size_t pos = 0;
  for (const auto& r : vld.dataset.records) pos += r.task_class == kEvidence;
  c.expect(vld.kept == 52037 && pos == 19406, fmt::format("shaped vld kept {} positive {}", vld.kept, pos));
}

void group_resolution(Check& c) {
  using S = std::set<std::string>;
  auto got = [](GroupKind k, const std::string& t) {
    const auto v = resolve_group({k, t});
    return S(v.begin(), v.end());
  };
  const S six{"en", "de", "nl", "es", "fr", "it"};
  const S germanic{"en", "de", "nl"}, romance{"es", "fr", "it"};
  c.expect(got(GroupKind::EN, "") == S{"en"}, "EN");
  c.expect(got(GroupKind::SIXL, "") == six, "6L");
  c.expect(got(GroupKind::NINEL, "") == S{"en", "de", "nl", "es", "fr", "it", "da", "sv", "nb"}, "9L");
  const auto all = resolve_group({GroupKind::SEVENTEENL, ""});
  c.expect(all.size() == 17 && S(all.begin(), all.end()).size() == 17, "17L size");
  c.expect(S(all.begin(), all.end()) == S{"en", "de", "nl", "es", "fr", "it", "da", "sv", "nb", "pl", "sk", "ru",
                                          "ar", "he", "zh", "zt", "ja"},
           "17L members");
  for (const std::string t : {"de", "nl", "es", "fr", "it"}) {
    const bool g = germanic.contains(t);
    c.expect(got(GroupKind::TL, t) == S{t}, "TL " + t);
    c.expect(got(GroupKind::RL, t) == (g ? germanic : romance), "RL " + t);
    c.expect(got(GroupKind::DL, t) == (g ? romance : germanic), "DL " + t);
    S u = got(GroupKind::RL, t);
    const S d = got(GroupKind::DL, t);
    for (const auto& l : d) c.expect(!u.contains(l), "RL and DL overlap for " + t);
    u.insert(d.begin(), d.end());
    c.expect(u == six, "RL and DL do not cover 6L for " + t);
  }
}

void annotation_aggregation(Check& c) {
  const auto js = fixtures::planted_stance_judgments();
  std::vector<oracle::Triple> triples;
  for (const auto& j : js) triples.emplace_back(j.item_id, j.annotator_id, j.answer);
  const AnnotationSet set(Question::stance, js);
  const auto rep = annotator_agreement(set, 50, 5);
  const auto o = oracle::agreement(triples, 50, 5);
  std::set<std::string> excluded;
  for (const auto& [a, _] : rep.excluded) excluded.insert(a);
  c.expect(excluded == o.excluded, "excluded partition differs");
  c.expect(rep.per_annotator_avg_kappa.size() == o.retained.size(), "retained partition differs");
  for (const auto& [a, k] : o.retained) {
    auto it = rep.per_annotator_avg_kappa.find(a);
    c.expect(it != rep.per_annotator_avg_kappa.end(), "missing retained " + a);
    if (it != rep.per_annotator_avg_kappa.end()) c.near(it->second, k, 1e-12, "avg kappa " + a);
  }

  const auto labels = aggregate_wa(set, rep, 5);
  const auto want = oracle::weighted_labels(triples, o.retained, 5);
  c.expect(labels.size() == want.size(), fmt::format("{} labels, oracle {}", labels.size(), want.size()));
  std::map<std::string, std::size_t> answers;
  for (const auto& j : js) ++answers[j.item_id];
  for (const auto& l : labels) {
    c.expect(answers[l.item_id] >= 5, "item with fewer than 5 answers labeled: " + l.item_id);
    auto it = want.find(l.item_id);
    c.expect(it != want.end() && it->second.label == l.label, "label differs for " + l.item_id);
  }

  // Peer rule: a5 and a6 share 49 items.
  const auto peers = annotator_agreement(AnnotationSet(Question::stance, fixtures::peer_boundary_judgments()), 50, 5);
  c.expect(peers.excluded.size() == 2 && peers.excluded.contains("a5") && peers.excluded.contains("a6"),
           "peer boundary exclusion");

  const AnnotationSet q(Question::quality, fixtures::quality_filter_judgments());
  const auto tq = filter_by_test_questions(q, 0.75);
  c.expect(tq.removed == std::vector<std::string>{"a5"}, "TQ filter removed the wrong annotators");
  const auto prior = filter_by_quality_prior(tq.set, 0.8);
  c.expect(prior.removed == std::vector<std::string>{"a6"}, "quality prior removed the wrong annotators");
}

struct PipelineRun {
  fs::path out;
  std::vector<std::string> failures;
};

PipelineRun run_chain(const fs::path& cfg, const fs::path& out, std::initializer_list<const char*> commands) {
  PipelineRun r{out, {}};
  for (const char* cmd : commands) {
    std::string log;
    if (fixtures::run(cmd, cfg, &log, out) != kExitOk) r.failures.push_back(fmt::format("{} failed: {}", cmd, log));
  }
  return r;
}

void translate_train_effect(Check& c, const fs::path& cfg, const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto run = run_chain(cfg, work / "c5",
                             {"select", "translate", "assemble", "experiment", "evaluate", "bleu"});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& f : run.failures) c.expect(false, f);
  if (!run.failures.empty()) return;
  const auto report = testing::read_file(run.out / "report" / "report.csv");
  const auto en = fixtures::report_mean(report, "EN", "de");
  const auto tl = fixtures::report_mean(report, "TL", "de");
  c.expect(en && tl, "report rows for EN/de and TL/de missing");
  if (en && tl) {
    std::cout << fmt::format("  pseudo-de macro-F1: EN {:.4f}, TL {:.4f}, gap {:.4f}; {:.1f}s\n", *en, *tl,
                             *tl - *en, secs);
    c.expect(*tl - *en >= 0.2, fmt::format("gap {:.4f} < 0.2", *tl - *en));
  }
  const auto bleu = testing::read_file(run.out / "bleu" / "bleu.csv");
  c.expect(bleu.find(",de,1.000000,") != std::string::npos, "mock back-translation BLEU is not 1.0: " + bleu);
  c.expect(secs < 120.0, fmt::format("took {:.1f}s", secs));
}

void determinism(Check& c, const fs::path& cfg, const fs::path& work) {
  const auto a = run_chain(cfg, work / "d1", {"select", "translate", "assemble", "experiment", "evaluate"});
  const auto b = run_chain(cfg, work / "d2", {"select", "translate", "assemble", "experiment", "evaluate"});
  for (const auto& f : a.failures) c.expect(false, f);
  for (const auto& f : b.failures) c.expect(false, f);
  if (!a.failures.empty() || !b.failures.empty()) return;
  std::size_t compared = 0;
  for (const fs::path sub : {"experiments", "report"}) {
    for (const auto& e : fs::recursive_directory_iterator(a.out / sub)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), a.out);
      c.expect(fs::exists(b.out / rel), "missing in second run: " + rel.string());
      c.expect(testing::read_file(e.path()) == testing::read_file(b.out / rel), "differs: " + rel.string());
      ++compared;
    }
  }
  c.expect(compared > 10, "too few files compared");
  std::cout << fmt::format("  {} files byte-identical\n", compared);
}

void multi_run(Check& c, const fs::path& work) {
  const auto s = aggregate_runs(std::vector<double>{0.4, 0.6});
  c.expect(s.std.has_value(), "std missing for two runs");
  if (s.std) c.near(*s.std, std::sqrt(0.02), 1e-9, "std of [0.4, 0.6]");
  c.near(s.mean, 0.5, 1e-12, "mean of [0.4, 0.6]");
  // The 5-seed pipeline run reports mean and sample std with n_runs 5.
  const auto report = testing::read_file(work / "c5" / "report" / "report.csv");
  const auto line = report.substr(report.find('\n') + 1, report.find('\n', report.find('\n') + 1) - report.find('\n') - 1);
  c.expect(line.ends_with(",5") && line.find(",,") == std::string::npos, "report row lacks 5-run std: " + line);
}

void label_preservation_check(Check& c, const fs::path& cfg, const fs::path& work) {
  const auto run = run_chain(cfg, work / "c8", {"preserve"});
  for (const auto& f : run.failures) c.expect(false, f);
  if (!run.failures.empty()) return;
  const fixtures::PreservationFixture pf;
  // Hand-filtered pairs, correlated by the independent oracle.
  const double want = oracle::pearson(pf.kept_x, pf.kept_y);
  const auto csv = testing::read_file(run.out / "preserve" / "preservation.csv");
  const auto row = csv.substr(csv.find('\n') + 1);
  c.expect(row.starts_with("stance_es,stance,9,7,"), "unexpected row: " + row);
  c.near(std::stod(row.substr(row.rfind(',') + 1)), want, 1e-9, "preserve pearson");
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / fmt::format("polyarg-acceptance-{}", ::getpid());
  fs::remove_all(work);
  fs::create_directories(work);
  const auto cfg = fixtures::PipelineInputs{}.write(work / "inputs");

  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
      {"metric oracles", metric_oracles},
      {"data selection", data_selection},
      {"language-group resolution", group_resolution},
      {"annotation aggregation", annotation_aggregation},
      {"translate-train effect", [&](Check& c) { translate_train_effect(c, cfg, work); }},
      {"determinism", [&](Check& c) { determinism(c, cfg, work); }},
      {"multi-run aggregation", [&](Check& c) { multi_run(c, work); }},
      {"label preservation", [&](Check& c) { label_preservation_check(c, cfg, work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    std::cout << (c.failures.empty() ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << "\n";
    for (const auto& f : c.failures) std::cout << "  " << f << "\n";
    failed += !c.failures.empty();
  }
  fs::remove_all(work);
  return failed == 0 ? 0 : 1;
}
