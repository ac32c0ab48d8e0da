#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polyarg/corpus.hpp"
#include "polyarg/error.hpp"

namespace polyarg {

// ---------------------------------------------------------------------------
// Language families and training groups.
// ---------------------------------------------------------------------------

enum class Family { romance, west_germanic, north_germanic, slavic, semitic, cj };

std::string_view to_string(Family f);
std::span<const std::string_view> family_members(Family f);
std::optional<Family> family_of(std::string_view lang);

enum class GroupKind { EN, TL, RL, DL, SIXL, NINEL, SEVENTEENL };

std::string_view to_string(GroupKind k);  // "EN", "TL", ..., "6L", "9L", "17L"
std::optional<GroupKind> parse_group_kind(std::string_view s);
// True for TL/RL/DL, whose languages depend on the target.
bool needs_target(GroupKind k);

// The five non-English translation targets of the main experiments.
std::span<const std::string_view> main_targets();
// All 17 languages, in report column order.
std::span<const std::string_view> all_languages();

struct LanguageGroup {
  GroupKind kind = GroupKind::EN;
  std::string target;  // ignored by target-independent kinds

  // e.g. "TL-de" or "6L".
  std::string label() const;
};

// Throws polyarg::Error when a target-dependent kind has target "en", an
// unknown target, or (for DL) a target outside romance/west-germanic.
std::vector<std::string> resolve_group(const LanguageGroup& group);

// Concatenates the per-language datasets in resolved order.
Dataset assemble_group(const std::map<std::string, Dataset>& per_lang, const LanguageGroup& group);

// ---------------------------------------------------------------------------
// Translation clients.
// ---------------------------------------------------------------------------

class TranslationClient {
 public:
  virtual ~TranslationClient() = default;
  // Order-preserving; the result has the same length as `texts`.
  virtual std::vector<std::string> translate(std::span<const std::string> texts, std::string_view src,
                                             std::string_view tgt) = 0;
  // Part of every cache key, so distinct engines never share entries.
  virtual std::string id() const = 0;
};

class TranslationFailure : public Error {
 public:
  TranslationFailure(std::string record_id, const std::string& what);
  const std::string& record_id() const { return record_id_; }

 private:
  std::string record_id_;
};

// Deterministic stand-in engine. Out of English every whitespace token gets
// the suffix "·<tgt>"; into English the "·<src>" suffix is stripped again.
// Between two non-English languages both steps apply.
class MockTranslator : public TranslationClient {
 public:
  std::vector<std::string> translate(std::span<const std::string> texts, std::string_view src,
                                     std::string_view tgt) override;
  std::string id() const override { return "mock-v1"; }

  static std::string transform(std::string_view text, std::string_view src, std::string_view tgt);
};

// POST {endpoint}/translate with {"src","tgt","texts"} -> {"translations"}.
class HttpTranslationClient : public TranslationClient {
 public:
  explicit HttpTranslationClient(std::string endpoint,
                                 std::chrono::milliseconds timeout = std::chrono::seconds(60));
  std::vector<std::string> translate(std::span<const std::string> texts, std::string_view src,
                                     std::string_view tgt) override;
  std::string id() const override { return "http:" + endpoint_; }

 private:
  std::string endpoint_;
  std::chrono::milliseconds timeout_;
};

// ---------------------------------------------------------------------------
// On-disk translation cache: append-only, one line per entry:
//   key-hash \t src \t tgt \t base64(translation)
// ---------------------------------------------------------------------------

class TranslationCache {
 public:
  // Empty path keeps the cache in memory only. Throws polyarg::Error on a
  // corrupt line, naming the line.
  explicit TranslationCache(std::filesystem::path path = {});

  static std::string key(std::string_view client_id, std::string_view src, std::string_view tgt,
                         std::string_view text);

  std::optional<std::string> lookup(const std::string& key) const;
  // Entries are appended in the given order. Serialized across threads.
  void store(std::span<const std::pair<std::string, std::string>> entries, std::string_view src,
             std::string_view tgt);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> entries_;
};

struct TranslateOptions {
  std::size_t batch_size = 16;
  std::size_t max_in_flight = 4;
  int max_attempts = 3;
  std::chrono::milliseconds backoff{200};  // doubles after every failed attempt
};

// Translates every record's text to `tgt` and projects labels verbatim.
// All records must share one source language.
Dataset translate_records(const Dataset& ds, std::string_view tgt, TranslationClient& client,
                          TranslationCache& cache, const TranslateOptions& opts = {});

struct RoundTrip {
  std::string id;
  std::string original;
  std::string round_trip;
};

std::vector<RoundTrip> back_translate(const Dataset& ds, std::string_view pivot, TranslationClient& client,
                                      TranslationCache& cache, const TranslateOptions& opts = {});

}  // namespace polyarg
