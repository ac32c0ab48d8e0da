#pragma once

#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "polyarg/annotation.hpp"
#include "polyarg/corpus.hpp"

namespace fixtures {

using polyarg::Dataset;
using polyarg::Judgment;
using polyarg::Question;
using polyarg::Record;
using polyarg::Source;
using polyarg::Split;
using polyarg::Stance;

inline Record record(std::string id, int topic_id, std::string text, Split split = Split::train) {
  Record r;
  r.id = std::move(id);
  r.topic_id = topic_id;
  r.topic = fmt::format("Topic number {}", topic_id);
  r.text = std::move(text);
  r.lang = "en";
  r.split = split;
  return r;
}

// ---------------------------------------------------------------------------
// Corpora whose default-threshold selection has known per-split counts.
// ---------------------------------------------------------------------------

struct ArgSplitShape {
  Split split;
  int first_topic;
  int topics;
  std::size_t pro, con, quality;
};

// Argument-corpus split: the first pro + con rows carry a confident stance,
// the first `quality` rows an extreme quality score; filler rows sit exactly
// on the thresholds and must all be dropped.
inline void add_arg_split(Dataset& ds, const ArgSplitShape& s) {
  const std::size_t stance_rows = s.pro + s.con;
  const std::size_t n = std::max(stance_rows, s.quality) + 6;
  for (std::size_t i = 0; i < n; ++i) {
    Record r = record(fmt::format("{}-{}", polyarg::to_string(s.split), i),
                      s.first_topic + static_cast<int>(i % static_cast<std::size_t>(s.topics)),
                      fmt::format("argument text {}", i), s.split);
    if (i < s.pro) {
      r.stance_label = Stance::pro;
      r.stance_conf = 0.9;
    } else if (i < stance_rows) {
      r.stance_label = Stance::con;
      r.stance_conf = 0.8;
    } else {
      switch (i % 3) {
        case 0: r.stance_label = Stance::pro; r.stance_conf = 0.75; break;
        case 1: r.stance_label = Stance::neutral; r.stance_conf = 0.99; break;
        default: r.stance_label = Stance::con; r.stance_conf = 0.5; break;
      }
    }
    if (i < s.quality) {
      r.quality_score = i % 2 ? 0.95 : 0.2;
    } else {
      r.quality_score = (i % 3 == 0) ? 0.9 : (i % 3 == 1 ? 0.4 : 0.6);
    }
    ds.records.push_back(std::move(r));
  }
}

struct EviSplitShape {
  Split split;
  int first_topic;
  int stance_topics;
  int evidence_topics;  // >= stance_topics; stance rows use the first ids
  std::size_t pro, con, evidence, non_evidence;
};

// Evidence corpus split: stance rows carry no evidence score and vice versa.
inline void add_evi_split(Dataset& ds, const EviSplitShape& s) {
  const auto sp = polyarg::to_string(s.split);
  std::size_t k = 0;
  for (std::size_t i = 0; i < s.pro + s.con + 4; ++i, ++k) {
    Record r = record(fmt::format("evi-{}-s{}", sp, i),
                      s.first_topic + static_cast<int>(i % static_cast<std::size_t>(s.stance_topics)),
                      fmt::format("evidence sentence {}", k), s.split);
    r.source = Source::evi_corpus;
    if (i < s.pro) {
      r.stance_label = Stance::pro;
    } else if (i < s.pro + s.con) {
      r.stance_label = Stance::con;
    } else {
      r.stance_label = Stance::neutral;
    }
    ds.records.push_back(std::move(r));
  }
  const std::size_t labeled = s.evidence + s.non_evidence;
  for (std::size_t i = 0; i < labeled + 4; ++i, ++k) {
    Record r = record(fmt::format("evi-{}-e{}", sp, i),
                      s.first_topic + static_cast<int>(i % static_cast<std::size_t>(s.evidence_topics)),
                      fmt::format("evidence sentence {}", k), s.split);
    r.source = Source::evi_corpus;
    if (i < s.evidence) {
      r.evidence_score = 0.85;
    } else if (i < labeled) {
      r.evidence_score = 0.1;
    } else {
      r.evidence_score = i % 2 ? 0.7 : 0.3;
    }
    ds.records.push_back(std::move(r));
  }
}

inline Dataset arg_corpus_published_shape() {
  Dataset ds{"arg", {}};
  add_arg_split(ds, {Split::train, 16, 49, 10162, 9766, 8373});
  add_arg_split(ds, {Split::dev, 65, 7, 1564, 1497, 1329});
  add_arg_split(ds, {Split::test, 1, 15, 3024, 2952, 2449});
  return ds;
}

inline Dataset evi_corpus_published_shape() {
  Dataset ds{"evi", {}};
  add_evi_split(ds, {Split::train, 1000, 171, 174, 5592, 3622, 3522, 14275});
  add_evi_split(ds, {Split::dev, 2000, 46, 47, 1726, 1202, 1145, 3967});
  add_evi_split(ds, {Split::test, 3000, 100, 100, 2614, 1209, 2068, 1937});
  return ds;
}

// 52,037 rows above/below the vld thresholds, 19,406 of them positive, plus
// boundary rows.
inline Dataset vld_corpus() {
  Dataset ds{"vld", {}};
  const std::size_t pos = 19406, total = 52037;
  const double boundary[] = {0.95, 0.05, 0.7, 0.3, 0.5};
  for (std::size_t i = 0; i < total + 5; ++i) {
    Record r = record(fmt::format("vld-{}", i), 5000 + static_cast<int>(i % 250), fmt::format("weak {}", i));
    r.source = Source::vld_corpus;
    r.evidence_score = i < pos ? 0.97 : (i < total ? 0.02 : boundary[i - total]);
    ds.records.push_back(std::move(r));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Separable stance corpus for the translate-train experiment.
//
// Pro texts contain the token "qa"; con texts contain "qa" followed by two
// random filler letters. Filler tokens avoid the letters a, d, e, q and z.
// Pro is recognized through one consistent right-edge feature ("a "), con
// through many rare ones ("ab", "qab", ...), so the English model leans
// towards con by default. The token-suffix mock translation removes exactly
// the right-edge n-grams and keeps the interior ones, so an English-trained
// model reads translated pro texts as con, while a model trained on
// translations learns "a\xC2\xB7" instead.
// ---------------------------------------------------------------------------

inline std::string filler(std::mt19937_64& rng) {
  static constexpr std::string_view kLetters = "bcfghijklmnoprstuvwxy";
  const std::size_t len = 3 + rng() % 3;
  std::string t;
  for (std::size_t i = 0; i < len; ++i) t += kLetters[rng() % kLetters.size()];
  return t;
}

inline std::string separable_text(bool pro, std::mt19937_64& rng) {
  const std::size_t n = 6 + rng() % 3;
  std::vector<std::string> toks;
  for (std::size_t i = 0; i < n; ++i) toks.push_back(filler(rng));
  // The signal token never sits first or last.
  std::string signal = "qa";
  if (!pro) {
    static constexpr std::string_view kLetters = "bcfghijklmnoprstuvwxy";
    signal += kLetters[rng() % kLetters.size()];
    signal += kLetters[rng() % kLetters.size()];
  }
  toks.insert(toks.begin() + 1 + static_cast<std::ptrdiff_t>(rng() % (n - 1)), signal);
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

inline Dataset separable_corpus(std::size_t train_per_class, std::size_t test_per_class, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  Dataset ds{"separable", {}};
  auto add = [&](Split split, std::size_t per_class) {
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
      const bool pro = i % 2 == 0;
      const int topic = 1 + static_cast<int>((i / 2) % 10);
      Record r = record(fmt::format("{}-{}", polyarg::to_string(split), i), topic, separable_text(pro, rng), split);
      r.topic = fmt::format("We should ban thing {}", topic);
      r.stance_label = pro ? Stance::pro : Stance::con;
      r.stance_conf = 0.9;
      r.quality_score = pro ? 0.95 : 0.1;
      ds.records.push_back(std::move(r));
    }
  };
  add(Split::train, train_per_class);
  add(Split::dev, 4);
  add(Split::test, test_per_class);
  return ds;
}

// Disjoint class vocabularies, for plain fitting checks.
inline Dataset disjoint_vocab_corpus(std::size_t n, std::uint64_t seed = 3) {
  static const std::vector<std::string> kPro{"benefit", "helps", "improves", "protects", "enables", "supports"};
  static const std::vector<std::string> kCon{"harms", "damages", "threatens", "ruins", "endangers", "weakens"};
  std::mt19937_64 rng(seed);
  Dataset ds{"disjoint", {}};
  for (std::size_t i = 0; i < n; ++i) {
    const bool pro = i % 2 == 0;
    const auto& vocab = pro ? kPro : kCon;
    std::string text;
    for (int k = 0; k < 5; ++k) {
      if (k) text += ' ';
      text += vocab[rng() % vocab.size()];
    }
    Record r = record(fmt::format("d{}", i), 1 + static_cast<int>(i % 4), text);
    r.stance_label = pro ? Stance::pro : Stance::con;
    r.stance_conf = 0.9;
    ds.records.push_back(std::move(r));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Annotation fixtures.
// ---------------------------------------------------------------------------

inline std::string item_name(std::size_t i) { return fmt::format("i{:02}", i); }

// Six annotators over 60 items. a1..a4 follow a hidden truth closely, a5
// loosely, a6 answers at random. Every pair shares at least 52 items
// (a1/a2 share 54); items 0 and 1 are skipped by a1 and a2 (4 answers),
// items 2..21 have 5 answers and the rest 6.
inline std::vector<Judgment> planted_stance_judgments(std::uint64_t seed = 11) {
  static constexpr std::string_view kOpts[] = {"con", "neutral", "pro"};
  std::mt19937_64 rng(seed);
  std::vector<std::string> truth;
  for (std::size_t i = 0; i < 60; ++i) truth.emplace_back(kOpts[rng() % 3]);
  const std::vector<std::pair<std::size_t, std::size_t>> skip_a{{0, 4}, {0, 2}, {6, 10}, {10, 14}, {14, 18}, {18, 22}};
  std::vector<Judgment> out;
  for (std::size_t a = 0; a < 6; ++a) {
    const double fidelity = a < 4 ? 0.9 : (a == 4 ? 0.6 : 0.0);
    for (std::size_t i = 0; i < 60; ++i) {
      bool skip = i >= skip_a[a].first && i < skip_a[a].second;
      if (a == 1 && i >= 4 && i < 6) skip = true;
      if (skip) continue;
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      std::string ans = u < fidelity ? truth[i] : std::string(kOpts[rng() % 3]);
      out.push_back({item_name(i), fmt::format("a{}", a + 1), Question::stance, ans, false, std::nullopt});
    }
  }
  return out;
}

// a1..a4 answer all 60 items, a5 items 0..54, a6 items 6..59: a5 and a6
// share 49 items, so both fall short of five qualifying peers.
inline std::vector<Judgment> peer_boundary_judgments(std::uint64_t seed = 5) {
  static constexpr std::string_view kOpts[] = {"con", "pro"};
  std::mt19937_64 rng(seed);
  std::vector<Judgment> out;
  for (std::size_t a = 0; a < 6; ++a) {
    const std::size_t lo = a == 5 ? 6 : 0, hi = a == 4 ? 55 : 60;
    for (std::size_t i = lo; i < hi; ++i) {
      out.push_back({item_name(i), fmt::format("a{}", a + 1), Question::stance, std::string(kOpts[rng() % 2]), false,
                     std::nullopt});
    }
  }
  return out;
}

// Quality set: six annotators, 100 regular items and 20 test questions
// each (120 judgments). TQ accuracies: a3 = 15/20 (boundary, kept),
// a5 = 14/20 (removed). "yes" fractions: a4 = 96/120 (boundary, kept),
// a6 = 98/120 (removed); everyone else answers "yes" on half.
inline std::vector<Judgment> quality_filter_judgments() {
  std::vector<Judgment> out;
  const std::size_t correct[] = {20, 19, 15, 20, 14, 20};
  const std::size_t yes_total[] = {60, 60, 60, 96, 60, 98};
  for (std::size_t a = 0; a < 6; ++a) {
    const std::string ann = fmt::format("a{}", a + 1);
    std::size_t yes = 0;
    for (std::size_t t = 0; t < 20; ++t) {
      const std::string gold = t % 2 ? "yes" : "no";
      const std::string flip = gold == "yes" ? "no" : "yes";
      const std::string ans = t < correct[a] ? gold : flip;
      yes += ans == "yes";
      out.push_back({fmt::format("tq{:02}", t), ann, Question::quality, ans, true, gold});
    }
    for (std::size_t i = 0; i < 100; ++i) {
      const bool y = yes < yes_total[a];
      yes += y;
      out.push_back({fmt::format("q{:03}", i), ann, Question::quality, y ? "yes" : "no", false, std::nullopt});
    }
  }
  return out;
}

// Six annotators label `labeled` items fully; `sparse` more items get four
// answers only. Answers agree with a hidden truth 90% of the time.
inline std::vector<Judgment> collection_judgments(std::size_t labeled, std::size_t sparse, std::uint64_t seed = 19) {
  std::mt19937_64 rng(seed);
  std::vector<Judgment> out;
  static constexpr std::string_view kOpts[] = {"con", "neutral", "pro"};
  for (std::size_t i = 0; i < labeled + sparse; ++i) {
    const std::string truth(kOpts[rng() % 3]);
    const std::size_t n_ann = i < labeled ? 6 : 4;
    for (std::size_t a = 0; a < n_ann; ++a) {
      const bool faithful = rng() % 10 != 0;
      out.push_back({fmt::format("arg{:05}", i), fmt::format("w{}", a + 1), Question::stance,
                     faithful ? truth : std::string(kOpts[rng() % 3]), false, std::nullopt});
    }
  }
  return out;
}

inline std::string annotations_csv(const std::vector<Judgment>& js) {
  std::string out = "item_id,annotator_id,question,answer,is_test_question,gold_answer\n";
  for (const auto& j : js) {
    out += fmt::format("{},{},{},{},{},{}\n", j.item_id, j.annotator_id, polyarg::to_string(j.question), j.answer,
                       j.is_test_question ? "true" : "false", j.gold_answer.value_or(""));
  }
  return out;
}

}  // namespace fixtures
