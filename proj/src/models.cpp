#include "polyarg/models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <random>
#include <set>
#include <thread>

#include <fmt/format.h>
#include "httplib.h"
#include "json.hpp"

#include "polyarg/error.hpp"
#include "polyarg/text.hpp"

namespace polyarg {

std::pair<std::string_view, std::string_view> task_classes(TaskKind task) {
  switch (task) {
    case TaskKind::stance: return {to_string(Stance::pro), to_string(Stance::con)};
    case TaskKind::evidence: return {kEvidence, kNonEvidence};
    case TaskKind::quality: break;
  }
  throw Error("the quality task is a regression task and has no classes");
}

bool is_classification(TaskKind task) { return task != TaskKind::quality; }

std::string gold_class(const Record& r, TaskKind task) {
  switch (task) {
    case TaskKind::stance:
      if (!r.stance_label || *r.stance_label == Stance::neutral) {
        throw Error(fmt::format("record {} has no pro/con stance label", r.id));
      }
      return std::string(to_string(*r.stance_label));
    case TaskKind::evidence:
      if (r.task_class == kEvidence || r.task_class == kNonEvidence) return *r.task_class;
      throw Error(fmt::format("record {} has no evidence class; run selection first", r.id));
    case TaskKind::quality: break;
  }
  throw Error("the quality task has no gold class");
}

double gold_value(const Record& r, TaskKind task) {
  if (task != TaskKind::quality) throw Error("gold_value is defined for the quality task only");
  if (!r.quality_score) throw Error(fmt::format("record {} has no quality score", r.id));
  return *r.quality_score;
}

std::vector<std::string> BaselineHyperparams::violations() const {
  std::vector<std::string> out;
  if (ngram_min < 1) out.emplace_back("baseline.ngram_min must be >= 1");
  if (ngram_min > ngram_max) out.emplace_back("baseline.ngram_min must be <= baseline.ngram_max");
  if (hash_buckets == 0 || (hash_buckets & (hash_buckets - 1)) != 0) {
    out.emplace_back("baseline.hash_buckets must be a power of two");
  }
  if (epochs_classification < 1) out.emplace_back("baseline.epochs_classification must be >= 1");
  if (epochs_regression < 1) out.emplace_back("baseline.epochs_regression must be >= 1");
  if (!(learning_rate > 0)) out.emplace_back("baseline.learning_rate must be > 0");
  if (!(l2 >= 0)) out.emplace_back("baseline.l2 must be >= 0");
  return out;
}

namespace {

std::uint32_t fnv1a(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

std::string featurize_input(std::string_view topic, std::string_view text) {
  std::string s = ascii_lower(topic);
  s += kTopicSeparator;
  s += ascii_lower(text);
  return s;
}

// Calls fn(ngram) for every n-gram occurrence of the given length.
template <typename Fn>
void for_each_ngram(const std::vector<std::string_view>& chars, int n, Fn&& fn) {
  const auto len = static_cast<std::size_t>(n);
  if (n < 1 || chars.size() < len) return;
  for (std::size_t i = 0; i + len <= chars.size(); ++i) {
    const char* begin = chars[i].data();
    const char* end = chars[i + len - 1].data() + chars[i + len - 1].size();
    fn(std::string_view(begin, static_cast<std::size_t>(end - begin)));
  }
}

}  // namespace

std::vector<std::string> char_ngrams(std::string_view topic, std::string_view text, int n) {
  const std::string s = featurize_input(topic, text);
  const auto chars = utf8_chars(s);
  std::set<std::string> out;
  for_each_ngram(chars, n, [&](std::string_view g) { out.emplace(g); });
  return {out.begin(), out.end()};
}

SparseVector featurize(std::string_view topic, std::string_view text, const BaselineHyperparams& hp) {
  const std::string s = featurize_input(topic, text);
  const auto chars = utf8_chars(s);
  const std::uint32_t mask = hp.hash_buckets - 1;
  std::vector<std::uint32_t> idx;
  for (int n = hp.ngram_min; n <= hp.ngram_max; ++n) {
    for_each_ngram(chars, n, [&](std::string_view g) { idx.push_back(fnv1a(g) & mask); });
  }
  std::sort(idx.begin(), idx.end());
  SparseVector v;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && idx[j] == idx[i]) ++j;
    v.emplace_back(idx[i], static_cast<double>(j - i));
    i = j;
  }
  double norm = 0;
  for (const auto& [_, x] : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (auto& [_, x] : v) x /= norm;
  }
  return v;
}

namespace {

double sigmoid(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// log(1 + exp(-t)) without overflow.
double softplus_neg(double t) {
  if (t > 0) return std::log1p(std::exp(-t));
  return -t + std::log1p(std::exp(t));
}

double dot(const std::vector<double>& w, const SparseVector& x) {
  double s = 0;
  for (const auto& [i, v] : x) s += w[i] * v;
  return s;
}

}  // namespace

void BaselineScorer::fit(const Dataset& train, TaskKind task, std::uint64_t seed) {
  if (auto v = hp_.violations(); !v.empty()) throw Error("invalid hyperparameters: " + v.front());
  if (train.empty()) throw Error("cannot fit on an empty training set");
  const bool classify = is_classification(task);

  std::vector<SparseVector> xs;
  std::vector<double> ys;  // +1/-1 for classification, target for regression
  xs.reserve(train.size());
  ys.reserve(train.size());
  std::size_t positives = 0;
  for (const auto& r : train.records) {
    xs.push_back(featurize(r.topic, r.text, hp_));
    if (classify) {
      const bool pos = gold_class(r, task) == task_classes(task).first;
      positives += pos ? 1 : 0;
      ys.push_back(pos ? 1.0 : -1.0);
    } else {
      ys.push_back(gold_value(r, task));
    }
  }
  if (classify && (positives == 0 || positives == train.size())) {
    throw Error(fmt::format("training set for {} has a single class", to_string(task)));
  }

  task_ = task;
  epoch_losses_.clear();
  // Weights are stored as scale * v so the L2 shrink is O(1) per step.
  std::vector<double> v(hp_.hash_buckets, 0.0);
  double scale = 1.0;
  double bias = 0.0;
  const double lr = hp_.learning_rate;
  const double decay = 1.0 - lr * hp_.l2;

  std::vector<std::size_t> order(xs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);

  auto margin = [&](std::size_t i) { return scale * dot(v, xs[i]) + bias; };
  auto loss_of = [&](std::size_t i) {
    const double z = margin(i);
    if (classify) return softplus_neg(ys[i] * z);
    return 0.5 * (z - ys[i]) * (z - ys[i]);
  };

  const int epochs = classify ? hp_.epochs_classification : hp_.epochs_regression;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng() % i]);
    }
    for (std::size_t i : order) {
      const double z = margin(i);
      // d loss / d z. For the logistic case -y * sigmoid(-y z), which flips
      // sign exactly when labels and weights are negated.
      const double g = classify ? -ys[i] * sigmoid(-ys[i] * z) : z - ys[i];
      scale *= decay;
      const double step = lr * g / scale;
      for (const auto& [j, x] : xs[i]) v[j] -= step * x;
      bias -= lr * g;
      if (scale < 1e-6) {
        for (auto& w : v) w *= scale;
        scale = 1.0;
      }
    }
    double total = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) total += loss_of(i);
    epoch_losses_.push_back(total / static_cast<double>(xs.size()));
  }

  for (auto& w : v) w *= scale;
  weights_ = std::move(v);
  bias_ = bias;
  fitted_ = true;
}

Prediction BaselineScorer::predict_one(const ScoringItem& item) const {
  if (!fitted_) throw Error("predict called before fit");
  const double z = dot(weights_, featurize(item.topic, item.text, hp_)) + bias_;
  if (!is_classification(task_)) return {"", z};
  const double p = sigmoid(z);
  auto [pos, neg] = task_classes(task_);
  return {std::string(p >= 0.5 ? pos : neg), p};
}

std::vector<Prediction> BaselineScorer::predict(std::span<const ScoringItem> items) const {
  std::vector<Prediction> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(predict_one(it));
  return out;
}

std::unique_ptr<BaselineScorer> fit_baseline(const Dataset& train, TaskKind task, const BaselineHyperparams& hp,
                                             std::uint64_t seed) {
  auto s = std::make_unique<BaselineScorer>(hp);
  s->fit(train, task, seed);
  return s;
}

namespace {

std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  auto scheme = endpoint.find("://");
  auto path = endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path == std::string::npos) return {endpoint, ""};
  std::string prefix = endpoint.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {endpoint.substr(0, path), prefix};
}

// Thrown for replies that retrying cannot fix.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

std::vector<double> post_predict(const std::string& endpoint, std::span<const ScoringItem> items, TaskKind task,
                                 const RemoteOptions& opts) {
  auto [base, prefix] = split_endpoint(endpoint);
  httplib::Client cli(base);
  const auto secs = std::max<long long>(1, std::chrono::duration_cast<std::chrono::seconds>(opts.timeout).count());
  cli.set_connection_timeout(secs);
  cli.set_read_timeout(secs);
  nlohmann::json body;
  body["task"] = to_string(task);
  body["items"] = nlohmann::json::array();
  for (const auto& it : items) body["items"].push_back({{"topic", it.topic}, {"text", it.text}});

  auto res = cli.Post(prefix + "/predict", body.dump(), "application/json");
  if (!res) throw Error(fmt::format("POST {}/predict: {}", endpoint, httplib::to_string(res.error())));
  if (res->status != 200) throw Error(fmt::format("POST {}/predict: HTTP {}", endpoint, res->status));
  std::vector<double> scores;
  try {
    scores = nlohmann::json::parse(res->body).at("scores").get<std::vector<double>>();
  } catch (const std::exception& e) {
    throw ProtocolError(fmt::format("POST {}/predict: malformed reply: {}", endpoint, e.what()));
  }
  if (scores.size() != items.size()) {
    throw ProtocolError(
        fmt::format("model server returned {} scores for {} items", scores.size(), items.size()));
  }
  return scores;
}

}  // namespace

std::vector<Prediction> remote_predict(const std::string& endpoint, std::span<const ScoringItem> items,
                                       TaskKind task, const RemoteOptions& opts) {
  if (items.empty()) throw Error("remote_predict: empty batch");
  std::vector<Prediction> out;
  out.reserve(items.size());
  const std::size_t bs = std::max<std::size_t>(opts.batch_size, 1);
  for (std::size_t lo = 0; lo < items.size(); lo += bs) {
    auto chunk = items.subspan(lo, std::min(bs, items.size() - lo));
    std::vector<double> scores;
    auto delay = opts.backoff;
    for (int attempt = 1;; ++attempt) {
      try {
        scores = post_predict(endpoint, chunk, task, opts);
        break;
      } catch (const ProtocolError&) {
        throw;
      } catch (const Error& e) {
        if (attempt >= opts.max_attempts) {
          throw Error(fmt::format("{} (after {} attempts)", e.what(), attempt));
        }
      }
      if (delay.count() > 0) {
        std::this_thread::sleep_for(delay);
        delay *= 2;
      }
    }
    for (double s : scores) {
      if (!std::isfinite(s)) throw Error("model server returned a non-finite score");
      if (is_classification(task)) {
        auto [pos, neg] = task_classes(task);
        out.push_back({std::string(s >= 0.5 ? pos : neg), s});
      } else {
        out.push_back({"", s});
      }
    }
  }
  return out;
}

void RemoteScorer::fit(const Dataset&, TaskKind task, std::uint64_t) { task_ = task; }

std::vector<Prediction> RemoteScorer::predict(std::span<const ScoringItem> items) const {
  return remote_predict(endpoint_, items, task_, opts_);
}

std::vector<ScoringItem> scoring_items(const Dataset& ds) {
  std::vector<ScoringItem> out;
  out.reserve(ds.size());
  for (const auto& r : ds.records) out.push_back({r.topic, r.text});
  return out;
}

std::string_view to_string(ModelKind k) { return k == ModelKind::baseline ? "baseline" : "remote"; }

std::string prediction_file_name(std::uint64_t seed) { return fmt::format("seed_{}.jsonl", seed); }

void write_predictions(const Dataset& eval, std::span<const Prediction> preds, TaskKind task,
                       const std::filesystem::path& path) {
  if (preds.size() != eval.size()) {
    throw Error(fmt::format("{} predictions for {} records", preds.size(), eval.size()));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = eval.records[i].id;
    if (is_classification(task)) {
      j["pred"] = preds[i].label;
    } else {
      j["pred"] = preds[i].score;
    }
    j["score"] = preds[i].score;
    out << j.dump() << '\n';
  }
}

std::vector<PredictionRow> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<PredictionRow> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      PredictionRow row;
      row.id = j.at("id").get<std::string>();
      if (j.at("pred").is_string()) row.label = j["pred"].get<std::string>();
      row.score = j.at("score").get<double>();
      out.push_back(std::move(row));
    } catch (const std::exception& e) {
      throw ParseError(path.string(), lineno, "", e.what());
    }
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& train, std::span<const EvalSet> evals,
                                const std::filesystem::path& out_dir) {
  if (cfg.seeds.empty()) throw Error("experiment needs at least one seed");
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    throw Error("experiment seeds must be distinct");
  }
  if (cfg.model == ModelKind::remote && cfg.remote_endpoint.empty()) {
    throw Error("remote model selected but no endpoint configured");
  }
  std::filesystem::create_directories(out_dir);

  std::vector<std::vector<ScoringItem>> items;
  for (const auto& e : evals) items.push_back(scoring_items(e.data));

  auto run_seed = [&](std::uint64_t seed) {
    std::unique_ptr<Scorer> scorer;
    if (cfg.model == ModelKind::baseline) {
      scorer = std::make_unique<BaselineScorer>(cfg.baseline);
    } else {
      scorer = std::make_unique<RemoteScorer>(cfg.remote_endpoint, cfg.remote);
    }
    scorer->fit(train, cfg.task, seed);
    std::vector<PredictionFile> files;
    for (std::size_t e = 0; e < evals.size(); ++e) {
      auto preds = evals[e].data.empty() ? std::vector<Prediction>{} : scorer->predict(items[e]);
      auto path = out_dir / evals[e].lang / prediction_file_name(seed);
      write_predictions(evals[e].data, preds, cfg.task, path);
      files.push_back({evals[e].lang, seed, path});
    }
    return files;
  };

  // Seeds run in waves of `workers` independent jobs.
  std::vector<std::vector<PredictionFile>> per_seed(cfg.seeds.size());
  const std::size_t workers = std::max<std::size_t>(cfg.workers, 1);
  for (std::size_t lo = 0; lo < cfg.seeds.size(); lo += workers) {
    const std::size_t hi = std::min(cfg.seeds.size(), lo + workers);
    if (hi - lo == 1) {
      per_seed[lo] = run_seed(cfg.seeds[lo]);
      continue;
    }
    std::vector<std::future<std::vector<PredictionFile>>> futures;
    for (std::size_t s = lo; s < hi; ++s) futures.push_back(std::async(std::launch::async, run_seed, cfg.seeds[s]));
    for (std::size_t s = lo; s < hi; ++s) per_seed[s] = futures[s - lo].get();
  }

  ExperimentResult result;
  for (auto& fs : per_seed) result.files.insert(result.files.end(), fs.begin(), fs.end());
  std::sort(result.files.begin(), result.files.end(), [](const PredictionFile& a, const PredictionFile& b) {
    return std::tie(a.lang, a.seed) < std::tie(b.lang, b.seed);
  });

  nlohmann::ordered_json m;
  m["task"] = to_string(cfg.task);
  m["group"] = cfg.group;
  m["model"] = to_string(cfg.model);
  m["seeds"] = cfg.seeds;
  m["train_size"] = train.size();
  if (cfg.model == ModelKind::baseline) {
    m["baseline"] = {{"ngram_min", cfg.baseline.ngram_min},
                     {"ngram_max", cfg.baseline.ngram_max},
                     {"hash_buckets", cfg.baseline.hash_buckets},
                     {"epochs", is_classification(cfg.task) ? cfg.baseline.epochs_classification
                                                            : cfg.baseline.epochs_regression},
                     {"learning_rate", cfg.baseline.learning_rate},
                     {"l2", cfg.baseline.l2}};
  } else {
    // Settings an operator should use when fine-tuning the served model.
    const bool cls = is_classification(cfg.task);
    m["remote"] = {{"endpoint", cfg.remote_endpoint},
                   {"reference_training",
                    {{"max_seq_length", cls ? 128 : 100},
                     {"batch_size", 32},
                     {"dropout", 0.1},
                     {"learning_rate", cls ? 5e-5 : 2e-5},
                     {"epochs", cls ? 10 : 3},
                     {"loss", cls ? "cross_entropy" : "mse"},
                     {"checkpoint", "last_epoch"}}}};
  }
  m["eval_sets"] = nlohmann::json::array();
  for (const auto& e : evals) {
    nlohmann::ordered_json ej;
    ej["lang"] = e.lang;
    ej["path"] = e.path;
    ej["files"] = nlohmann::json::array();
    for (const auto& f : result.files) {
      if (f.lang == e.lang) ej["files"].push_back(std::filesystem::relative(f.path, out_dir).generic_string());
    }
    m["eval_sets"].push_back(std::move(ej));
  }
  result.manifest = out_dir / "manifest.json";
  std::ofstream mf(result.manifest, std::ios::binary | std::ios::trunc);
  if (!mf) throw Error("cannot write " + result.manifest.string());
  mf << m.dump(2) << '\n';
  return result;
}

}  // namespace polyarg
