#include "polyarg/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "polyarg/csv.hpp"
#include "polyarg/error.hpp"
#include "polyarg/text.hpp"
#include "polyarg/translation.hpp"

namespace polyarg {

double macro_f1(std::span<const std::string> gold, std::span<const std::string> pred) {
  if (gold.size() != pred.size()) {
    throw Error(fmt::format("macro_f1: length mismatch ({} vs {})", gold.size(), pred.size()));
  }
  if (gold.empty()) throw Error("macro_f1: empty input");
  struct Counts {
    std::size_t tp = 0, fp = 0, fn = 0;
  };
  std::map<std::string_view, Counts> per_class;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == pred[i]) {
      ++per_class[gold[i]].tp;
    } else {
      ++per_class[gold[i]].fn;
      ++per_class[pred[i]].fp;
    }
  }
  double sum = 0;
  for (const auto& [_, c] : per_class) {
    const double p = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    const double r = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    sum += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  return sum / static_cast<double>(per_class.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(fmt::format("pearson: length mismatch ({} vs {})", x.size(), y.size()));
  if (x.size() < 2) throw Error("pearson: need at least two points");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw Error("pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double corpus_bleu(std::span<const std::string> candidates, std::span<const std::string> references) {
  if (candidates.size() != references.size()) {
    throw Error(fmt::format("corpus_bleu: length mismatch ({} vs {})", candidates.size(), references.size()));
  }
  if (candidates.empty()) throw Error("corpus_bleu: empty corpus");
  constexpr int kMaxN = 4;
  std::array<std::size_t, kMaxN> matched{}, total{};
  std::size_t cand_len = 0, ref_len = 0;

  auto count = [](const std::vector<std::string_view>& toks, int n) {
    std::map<std::vector<std::string_view>, std::size_t> out;
    const auto len = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + len <= toks.size(); ++i) {
      ++out[std::vector<std::string_view>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                          toks.begin() + static_cast<std::ptrdiff_t>(i + len))];
    }
    return out;
  };

  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto cand = split_ws(candidates[s]);
    const auto ref = split_ws(references[s]);
    cand_len += cand.size();
    ref_len += ref.size();
    for (int n = 1; n <= kMaxN; ++n) {
      const auto cc = count(cand, n);
      const auto rc = count(ref, n);
      for (const auto& [gram, c] : cc) {
        total[n - 1] += c;
        if (auto it = rc.find(gram); it != rc.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  double log_p = 0;
  for (int n = 0; n < kMaxN; ++n) {
    if (matched[n] == 0) return 0.0;
    log_p += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n]));
  }
  const double c = static_cast<double>(cand_len), r = static_cast<double>(ref_len);
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_p / kMaxN);
}

std::vector<TopicScore> per_topic(std::span<const std::string> gold, std::span<const std::string> pred,
                                  std::span<const int> topic_ids, std::span<const int> order) {
  if (gold.size() != pred.size() || gold.size() != topic_ids.size()) {
    throw Error("per_topic: gold, pred and topic ids must be aligned");
  }
  std::map<int, std::pair<std::vector<std::string>, std::vector<std::string>>> parts;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto& [g, p] = parts[topic_ids[i]];
    g.push_back(gold[i]);
    p.push_back(pred[i]);
  }
  std::vector<int> ids;
  for (int id : order) {
    if (parts.contains(id) && std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  for (const auto& [id, _] : parts) {
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  std::vector<TopicScore> out;
  for (int id : ids) {
    const auto& [g, p] = parts.at(id);
    const std::set<std::string> classes(g.begin(), g.end());
    out.push_back({id, macro_f1(g, p), g.size(), classes.size() < 2});
  }
  return out;
}

RunSummary aggregate_runs(std::span<const double> values) {
  if (values.empty()) throw Error("aggregate_runs: no values");
  // Sorted summation keeps the result independent of run order.
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  RunSummary s;
  s.n = v.size();
  // Offsets from the smallest value, so equal runs give an exact mean.
  double sum = 0;
  for (double x : v) sum += x - v.front();
  s.mean = v.front() + sum / static_cast<double>(v.size());
  if (v.size() >= 2) {
    double ss = 0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

PreservationResult label_preservation(std::span<const AggregatedLabel> original,
                                      std::span<const AggregatedLabel> translated, TaskKind task,
                                      const SelectionThresholds& filters, std::size_t min_stance_labels) {
  std::map<std::string_view, const AggregatedLabel*> by_id;
  for (const auto& t : translated) by_id.emplace(t.item_id, &t);

  PreservationResult res;
  std::vector<double> xs, ys;
  for (const auto& o : original) {
    auto it = by_id.find(o.item_id);
    if (it == by_id.end()) continue;
    ++res.matched;
    const AggregatedLabel& t = *it->second;
    const double orig = wa_score(o);
    bool keep = true;
    switch (task) {
      case TaskKind::stance: keep = t.n_answers >= min_stance_labels; break;
      case TaskKind::quality: keep = orig > filters.quality_high_min || orig < filters.quality_low_max; break;
      case TaskKind::evidence: keep = orig > filters.evidence_pos_min || orig < filters.evidence_neg_max; break;
    }
    if (!keep) continue;
    xs.push_back(orig);
    ys.push_back(wa_score(t));
  }
  res.used = xs.size();
  if (res.used < 2) {
    throw Error(fmt::format("label_preservation: {} item(s) left after filtering, need at least 2", res.used));
  }
  res.pearson = pearson(xs, ys);
  return res;
}

const std::map<int, std::string_view>& topic_table() {
  static const std::map<int, std::string_view> table{
      {1, "We should abolish the Olympic Games"},
      {2, "We should ban factory farming"},
      {3, "We should ban algorithmic trading"},
      {4, "We should ban targeted killing"},
      {5, "We should prohibit school prayer"},
      {6, "We should ban private military companies"},
      {7, "We should adopt libertarianism"},
      {8, "We should ban missionary work"},
      {9, "Social media brings more harm than good"},
      {10, "We should legalize cannabis"},
      {11, "We should abolish the three-strikes laws"},
      {12, "We should prohibit women in combat"},
      {13, "Holocaust denial should be a criminal offence"},
      {14, "The use of public defenders should be mandatory"},
      {15, "We should adopt atheism"},
  };
  return table;
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::macro_f1: return "macro_f1";
    case Metric::pearson: return "pearson";
    case Metric::bleu: return "bleu";
  }
  return "?";
}

Metric metric_for(TaskKind task) { return task == TaskKind::quality ? Metric::pearson : Metric::macro_f1; }

std::string EvalReport::to_csv() const {
  std::string out = "model,group,lang,task,metric,mean,std,n_runs\n";
  for (const auto& e : entries) {
    out += csv::join({e.model, e.group, e.lang, e.task, std::string(to_string(e.metric)),
                      fmt::format("{:.6f}", e.summary.mean),
                      e.summary.std ? fmt::format("{:.6f}", *e.summary.std) : std::string(),
                      std::to_string(e.summary.n)});
    out += '\n';
  }
  return out;
}

std::string EvalReport::render_table(std::string_view task, Metric metric) const {
  std::vector<std::string> groups;
  std::set<std::string> langs_present;
  std::map<std::pair<std::string, std::string>, double> cell;
  for (const auto& e : entries) {
    if (e.task != task || e.metric != metric) continue;
    if (std::find(groups.begin(), groups.end(), e.group) == groups.end()) groups.push_back(e.group);
    langs_present.insert(e.lang);
    cell[{e.group, e.lang}] = e.summary.mean;
  }
  std::vector<std::string> langs;
  for (auto l : all_languages()) {
    if (langs_present.erase(std::string(l))) langs.emplace_back(l);
  }
  langs.insert(langs.end(), langs_present.begin(), langs_present.end());

  std::size_t width = 5;
  for (const auto& g : groups) width = std::max(width, g.size());
  std::string out = fmt::format("{} {}\n", task, to_string(metric));
  out += fmt::format("{:<{}}", "Model", width);
  for (const auto& l : langs) out += fmt::format(" {:>6}", ascii_upper(l));
  out += '\n';
  for (const auto& g : groups) {
    out += fmt::format("{:<{}}", g, width);
    for (const auto& l : langs) {
      auto it = cell.find({g, l});
      out += it == cell.end() ? fmt::format(" {:>6}", "-") : fmt::format(" {:>6.1f}", 100.0 * it->second);
    }
    out += '\n';
  }
  return out;
}

std::string per_topic_csv(std::span<const TopicScore> scores, const std::map<int, std::string>& names) {
  std::string out = "topic_id,topic,value,single_class_gold\n";
  for (const auto& s : scores) {
    std::string name;
    if (auto it = names.find(s.topic_id); it != names.end()) {
      name = it->second;
    } else if (auto jt = topic_table().find(s.topic_id); jt != topic_table().end()) {
      name = std::string(jt->second);
    }
    out += csv::join({std::to_string(s.topic_id), name, fmt::format("{:.6f}", s.value),
                      s.single_class_gold ? "1" : "0"});
    out += '\n';
  }
  return out;
}

}  // namespace polyarg
