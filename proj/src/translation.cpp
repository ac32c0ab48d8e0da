#include "polyarg/translation.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <future>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <sodium.h>
#include "httplib.h"
#include "json.hpp"

#include "polyarg/text.hpp"

namespace polyarg {

namespace {

constexpr std::array<std::string_view, 3> kRomance{"es", "fr", "it"};
constexpr std::array<std::string_view, 3> kWestGermanic{"en", "de", "nl"};
constexpr std::array<std::string_view, 3> kNorthGermanic{"da", "sv", "nb"};
constexpr std::array<std::string_view, 3> kSlavic{"pl", "sk", "ru"};
constexpr std::array<std::string_view, 2> kSemitic{"ar", "he"};
constexpr std::array<std::string_view, 3> kChineseJapanese{"zh", "zt", "ja"};
constexpr std::array<Family, 6> kFamilies{Family::west_germanic, Family::romance, Family::north_germanic,
                                          Family::slavic,        Family::semitic, Family::cj};

constexpr std::array<std::string_view, 5> kMainTargets{"de", "nl", "es", "fr", "it"};
constexpr std::array<std::string_view, 17> kAllLanguages{"en", "de", "nl", "es", "fr", "it", "da", "sv", "nb",
                                                         "pl", "sk", "ru", "ar", "he", "zh", "zt", "ja"};

constexpr std::string_view kMockMark = "\xC2\xB7";  // U+00B7 MIDDLE DOT

}  // namespace

std::string_view to_string(Family f) {
  switch (f) {
    case Family::romance: return "romance";
    case Family::west_germanic: return "west_germanic";
    case Family::north_germanic: return "north_germanic";
    case Family::slavic: return "slavic";
    case Family::semitic: return "semitic";
    case Family::cj: return "cj";
  }
  return "?";
}

std::span<const std::string_view> family_members(Family f) {
  switch (f) {
    case Family::romance: return kRomance;
    case Family::west_germanic: return kWestGermanic;
    case Family::north_germanic: return kNorthGermanic;
    case Family::slavic: return kSlavic;
    case Family::semitic: return kSemitic;
    case Family::cj: return kChineseJapanese;
  }
  return {};
}

std::optional<Family> family_of(std::string_view lang) {
  for (Family f : kFamilies) {
    auto m = family_members(f);
    if (std::find(m.begin(), m.end(), lang) != m.end()) return f;
  }
  return std::nullopt;
}

std::string_view to_string(GroupKind k) {
  switch (k) {
    case GroupKind::EN: return "EN";
    case GroupKind::TL: return "TL";
    case GroupKind::RL: return "RL";
    case GroupKind::DL: return "DL";
    case GroupKind::SIXL: return "6L";
    case GroupKind::NINEL: return "9L";
    case GroupKind::SEVENTEENL: return "17L";
  }
  return "?";
}

std::optional<GroupKind> parse_group_kind(std::string_view s) {
  for (auto k : {GroupKind::EN, GroupKind::TL, GroupKind::RL, GroupKind::DL, GroupKind::SIXL,
                 GroupKind::NINEL, GroupKind::SEVENTEENL}) {
    if (to_string(k) == s) return k;
  }
  if (s == "SIXL") return GroupKind::SIXL;
  if (s == "NINEL") return GroupKind::NINEL;
  if (s == "SEVENTEENL") return GroupKind::SEVENTEENL;
  return std::nullopt;
}

bool needs_target(GroupKind k) { return k == GroupKind::TL || k == GroupKind::RL || k == GroupKind::DL; }

std::span<const std::string_view> main_targets() { return kMainTargets; }
std::span<const std::string_view> all_languages() { return kAllLanguages; }

std::string LanguageGroup::label() const {
  if (needs_target(kind)) return fmt::format("{}-{}", to_string(kind), target);
  return std::string(to_string(kind));
}

std::vector<std::string> resolve_group(const LanguageGroup& group) {
  auto append = [](std::vector<std::string>& out, Family f) {
    for (auto l : family_members(f)) out.emplace_back(l);
  };
  std::vector<std::string> out;
  if (needs_target(group.kind)) {
    if (group.target == "en") {
      throw Error(fmt::format("{} is undefined for target en", to_string(group.kind)));
    }
    auto fam = family_of(group.target);
    if (!fam) throw Error(fmt::format("unknown target language '{}'", group.target));
    switch (group.kind) {
      case GroupKind::TL: out.push_back(group.target); break;
      case GroupKind::RL: append(out, *fam); break;
      case GroupKind::DL:
        if (*fam == Family::romance) {
          append(out, Family::west_germanic);
        } else if (*fam == Family::west_germanic) {
          append(out, Family::romance);
        } else {
          throw Error(fmt::format("DL is defined only for romance and west-germanic targets, not '{}'",
                                  group.target));
        }
        break;
      default: break;
    }
    return out;
  }
  switch (group.kind) {
    case GroupKind::EN: out.emplace_back("en"); break;
    case GroupKind::SEVENTEENL:
      append(out, Family::west_germanic);
      append(out, Family::romance);
      append(out, Family::north_germanic);
      append(out, Family::slavic);
      append(out, Family::semitic);
      append(out, Family::cj);
      break;
    case GroupKind::NINEL:
      append(out, Family::west_germanic);
      append(out, Family::romance);
      append(out, Family::north_germanic);
      break;
    case GroupKind::SIXL:
      append(out, Family::west_germanic);
      append(out, Family::romance);
      break;
    default: break;
  }
  return out;
}

Dataset assemble_group(const std::map<std::string, Dataset>& per_lang, const LanguageGroup& group) {
  Dataset out;
  out.name = group.label();
  for (const auto& lang : resolve_group(group)) {
    auto it = per_lang.find(lang);
    if (it == per_lang.end()) {
      throw Error(fmt::format("group {} needs language '{}', which was not provided", group.label(), lang));
    }
    out.records.insert(out.records.end(), it->second.records.begin(), it->second.records.end());
  }
  return out;
}

TranslationFailure::TranslationFailure(std::string record_id, const std::string& what)
    : Error(fmt::format("translation failed at record {}: {}", record_id, what)), record_id_(std::move(record_id)) {}

std::string MockTranslator::transform(std::string_view text, std::string_view src, std::string_view tgt) {
  const std::string strip = src == "en" ? std::string() : fmt::format("{}{}", kMockMark, src);
  const std::string add = tgt == "en" ? std::string() : fmt::format("{}{}", kMockMark, tgt);
  std::string out;
  out.reserve(text.size() + text.size() / 2);
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  std::size_t i = 0;
  while (i < text.size()) {
    if (is_space(text[i])) {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    std::string_view tok = text.substr(i, j - i);
    if (!strip.empty() && tok.size() > strip.size() && tok.ends_with(strip)) tok.remove_suffix(strip.size());
    out += tok;
    out += add;
    i = j;
  }
  return out;
}

std::vector<std::string> MockTranslator::translate(std::span<const std::string> texts, std::string_view src,
                                                   std::string_view tgt) {
  std::vector<std::string> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(transform(t, src, tgt));
  return out;
}

HttpTranslationClient::HttpTranslationClient(std::string endpoint, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), timeout_(timeout) {
  while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
}

namespace {

// Splits "http://host:port/prefix" into ("http://host:port", "/prefix").
std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  auto scheme = endpoint.find("://");
  auto path = endpoint.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path == std::string::npos) return {endpoint, ""};
  return {endpoint.substr(0, path), endpoint.substr(path)};
}

}  // namespace

std::vector<std::string> HttpTranslationClient::translate(std::span<const std::string> texts,
                                                          std::string_view src, std::string_view tgt) {
  auto [base, prefix] = split_endpoint(endpoint_);
  httplib::Client cli(base);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout_).count();
  cli.set_connection_timeout(secs);
  cli.set_read_timeout(secs);
  nlohmann::json body{{"src", src}, {"tgt", tgt}, {"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  auto res = cli.Post(prefix + "/translate", body.dump(), "application/json");
  if (!res) throw Error(fmt::format("POST {}/translate: {}", endpoint_, httplib::to_string(res.error())));
  if (res->status != 200) throw Error(fmt::format("POST {}/translate: HTTP {}", endpoint_, res->status));
  auto reply = nlohmann::json::parse(res->body);
  auto out = reply.at("translations").get<std::vector<std::string>>();
  if (out.size() != texts.size()) {
    throw Error(fmt::format("translation service returned {} texts for {}", out.size(), texts.size()));
  }
  return out;
}

namespace {

void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw Error("libsodium initialization failed");
}

std::string to_base64(std::string_view s) {
  std::string out(sodium_base64_ENCODED_LEN(s.size(), sodium_base64_VARIANT_ORIGINAL), '\0');
  sodium_bin2base64(out.data(), out.size(), reinterpret_cast<const unsigned char*>(s.data()), s.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::strlen(out.c_str()));
  return out;
}

std::optional<std::string> from_base64(std::string_view s) {
  std::string out(s.size(), '\0');
  std::size_t len = 0;
  if (sodium_base642bin(reinterpret_cast<unsigned char*>(out.data()), out.size(), s.data(), s.size(), nullptr,
                        &len, nullptr, sodium_base64_VARIANT_ORIGINAL) != 0) {
    return std::nullopt;
  }
  out.resize(len);
  return out;
}

bool is_hex_key(std::string_view s) {
  return s.size() == 2 * crypto_hash_sha256_BYTES &&
         std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

}  // namespace

TranslationCache::TranslationCache(std::filesystem::path path) : path_(std::move(path)) {
  ensure_sodium();
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_, std::ios::binary);
  if (!in) throw Error("cannot open translation cache " + path_.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto corrupt = [&](std::string_view why) {
      return Error(fmt::format("translation cache {} line {} is corrupt ({}): {}", path_.string(), lineno, why,
                               line.substr(0, 80)));
    };
    std::vector<std::string_view> parts;
    std::string_view rest = line;
    for (std::size_t tab; (tab = rest.find('\t')) != std::string_view::npos;) {
      parts.push_back(rest.substr(0, tab));
      rest.remove_prefix(tab + 1);
    }
    parts.push_back(rest);
    if (parts.size() != 4) throw corrupt("expected 4 tab-separated fields");
    if (!is_hex_key(parts[0])) throw corrupt("bad key hash");
    auto text = from_base64(parts[3]);
    if (!text) throw corrupt("bad base64 payload");
    entries_.insert_or_assign(std::string(parts[0]), std::move(*text));
  }
}

std::string TranslationCache::key(std::string_view client_id, std::string_view src, std::string_view tgt,
                                  std::string_view text) {
  ensure_sodium();
  std::string material = fmt::format("{}\x1f{}\x1f{}\x1f{}", client_id, src, tgt, text);
  std::array<unsigned char, crypto_hash_sha256_BYTES> digest{};
  crypto_hash_sha256(digest.data(), reinterpret_cast<const unsigned char*>(material.data()), material.size());
  std::string hex(2 * digest.size() + 1, '\0');
  sodium_bin2hex(hex.data(), hex.size(), digest.data(), digest.size());
  hex.pop_back();
  return hex;
}

std::optional<std::string> TranslationCache::lookup(const std::string& key) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void TranslationCache::store(std::span<const std::pair<std::string, std::string>> entries, std::string_view src,
                             std::string_view tgt) {
  std::lock_guard lock(mu_);
  if (!path_.empty()) {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) throw Error("cannot append to translation cache " + path_.string());
    for (const auto& [k, v] : entries) out << k << '\t' << src << '\t' << tgt << '\t' << to_base64(v) << '\n';
  }
  for (const auto& [k, v] : entries) entries_.insert_or_assign(k, v);
}

std::size_t TranslationCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

namespace {

struct Pending {
  std::string key;
  std::string text;
  std::string record_id;  // first record carrying this text
};

std::vector<std::string> translate_with_retry(TranslationClient& client, std::span<const Pending> batch,
                                              std::string_view src, std::string_view tgt,
                                              const TranslateOptions& opts) {
  std::vector<std::string> texts;
  texts.reserve(batch.size());
  for (const auto& p : batch) texts.push_back(p.text);
  auto delay = opts.backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= std::max(opts.max_attempts, 1); ++attempt) {
    try {
      auto out = client.translate(texts, src, tgt);
      if (out.size() != texts.size()) {
        throw Error(fmt::format("client returned {} translations for {} texts", out.size(), texts.size()));
      }
      return out;
    } catch (const std::exception& e) {
      last_error = e.what();
    }
    if (attempt < opts.max_attempts && delay.count() > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
  throw TranslationFailure(batch.front().record_id,
                           fmt::format("{} -> {} after {} attempts: {}", src, tgt, opts.max_attempts, last_error));
}

}  // namespace

Dataset translate_records(const Dataset& ds, std::string_view tgt, TranslationClient& client,
                          TranslationCache& cache, const TranslateOptions& opts) {
  Dataset out{ds.name, {}};
  if (ds.empty()) return out;
  const std::string src = ds.records.front().lang;
  for (const auto& r : ds.records) {
    if (r.lang != src) {
      throw Error(fmt::format("record {} is in '{}' but the dataset source language is '{}'", r.id, r.lang, src));
    }
  }
  if (src == tgt) return ds;

  const std::string cid = client.id();
  std::vector<std::string> keys;
  keys.reserve(ds.size());
  std::vector<Pending> pending;
  std::set<std::string> queued;
  for (const auto& r : ds.records) {
    keys.push_back(TranslationCache::key(cid, src, tgt, r.text));
    if (!cache.lookup(keys.back()) && queued.insert(keys.back()).second) {
      pending.push_back({keys.back(), r.text, r.id});
    }
  }

  const std::size_t bs = std::max<std::size_t>(opts.batch_size, 1);
  const std::size_t wave = std::max<std::size_t>(opts.max_in_flight, 1);
  std::vector<std::span<const Pending>> batches;
  for (std::size_t i = 0; i < pending.size(); i += bs) {
    batches.emplace_back(pending.data() + i, std::min(bs, pending.size() - i));
  }

  // Batches run concurrently in waves; results are stored in batch order so
  // the cache file does not depend on thread timing.
  for (std::size_t w = 0; w < batches.size(); w += wave) {
    const std::size_t end = std::min(batches.size(), w + wave);
    std::vector<std::future<std::vector<std::string>>> futures;
    for (std::size_t b = w; b < end; ++b) {
      futures.push_back(std::async(std::launch::async, [&, b] {
        return translate_with_retry(client, batches[b], src, tgt, opts);
      }));
    }
    std::optional<TranslationFailure> failure;
    for (std::size_t b = w; b < end; ++b) {
      try {
        auto texts = futures[b - w].get();
        std::vector<std::pair<std::string, std::string>> entries;
        for (std::size_t i = 0; i < texts.size(); ++i) entries.emplace_back(batches[b][i].key, std::move(texts[i]));
        cache.store(entries, src, tgt);
      } catch (const TranslationFailure& e) {
        if (!failure) failure = e;
      }
    }
    if (failure) throw *failure;
  }

  out.records.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Record r = ds.records[i];
    auto t = cache.lookup(keys[i]);
    if (!t) throw TranslationFailure(r.id, "translation missing after client call");
    r.text = std::move(*t);
    r.lang = std::string(tgt);
    r.source = Source::machine_translated;
    out.records.push_back(std::move(r));
  }
  return out;
}

std::vector<RoundTrip> back_translate(const Dataset& ds, std::string_view pivot, TranslationClient& client,
                                      TranslationCache& cache, const TranslateOptions& opts) {
  std::vector<RoundTrip> out;
  if (ds.empty()) return out;
  const std::string src = ds.records.front().lang;
  auto forward = translate_records(ds, pivot, client, cache, opts);
  auto back = translate_records(forward, src, client, cache, opts);
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back({ds.records[i].id, ds.records[i].text, back.records[i].text});
  }
  return out;
}

}  // namespace polyarg
