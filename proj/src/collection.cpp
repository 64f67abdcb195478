#include "xlc/collection.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <mutex>
#include <random>
#include <thread>

#include "http.hpp"
#include "xlc/text.hpp"

namespace xlc {

using nlohmann::json;
using nlohmann::ordered_json;

std::map<std::string, std::map<LanguageCode, std::string>> read_text_table(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": invalid JSON: " + e.what());
  }
  if (!doc.is_object()) throw Error(path.string() + ": expected a JSON object");
  std::map<std::string, std::map<LanguageCode, std::string>> table;
  for (const auto& [key, per_lang] : doc.items()) {
    if (!per_lang.is_object()) throw Error(path.string() + ": entry " + key + " is not an object");
    for (const auto& [lang, text] : per_lang.items()) {
      table[key][LanguageCode(lang)] = nfc(text.get<std::string>());
    }
  }
  return table;
}

void CollectionConfig::validate() const {
  if (endpoint.empty()) throw Error("collection: endpoint URL required");
  if (model_id.empty()) throw Error("collection: model id required");
  if (shots < 0) throw Error("collection: shots must be >= 0");
  if (concurrency < 1) throw Error("collection: concurrency must be >= 1");
  if (retry.max_attempts < 1) throw Error("collection: max attempts must be >= 1");
  if (requests_per_second < 0.0) throw Error("collection: rate must be >= 0");
  if (variant == PromptVariant::custom && sources.custom_template.empty()) {
    throw Error("collection: custom prompt variant needs a template");
  }
}

ordered_json CollectionConfig::snapshot() const {
  ordered_json s;
  s["endpoint"] = endpoint;
  s["model_id"] = model_id;
  s["decoding"] = decoding;
  s["shots"] = shots;
  s["exemplar_seed"] = exemplar_seed;
  s["concurrency"] = concurrency;
  s["timeout_ms"] = timeout.count();
  s["max_attempts"] = retry.max_attempts;
  s["initial_backoff_ms"] = retry.initial_backoff.count();
  s["requests_per_second"] = requests_per_second;
  s["prompt_variant"] = to_string(variant);
  s["system_prompt"] = system_prompt;
  s["first_line_only"] = first_line_only;
  if (variant == PromptVariant::custom) s["custom_template"] = sources.custom_template;
  s["languages"] = ordered_json::array();
  for (const auto& l : languages) s["languages"].push_back(l.str());
  return s;
}

// ---------------------------------------------------------------------------
// Exemplars and prompts

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Uniform in [0, bound) by rejection; portable unlike std::uniform_int_distribution.
std::uint64_t bounded(std::uint64_t& state, std::uint64_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = splitmix64(state);
  } while (x >= limit);
  return x % bound;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos;
       pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

std::vector<QAItem> sample_exemplars(const std::vector<QAItem>& pool, int k, std::uint64_t seed,
                                     const std::string& domain) {
  if (k < 0) throw Error("sample_exemplars: k must be >= 0");
  if (static_cast<std::size_t>(k) > pool.size()) {
    throw CollectionError("exemplar pool for domain " + domain + " has " +
                          std::to_string(pool.size()) + " items, " + std::to_string(k) +
                          " requested");
  }
  std::vector<std::size_t> idx(pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::uint64_t state = seed ^ fnv1a(domain);
  std::vector<QAItem> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
    const std::size_t j = i + bounded(state, idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(pool[idx[i]]);
  }
  return out;
}

std::string variant_question(const QAItem& item, const LanguageCode& lang, PromptVariant variant,
                             const PromptSources& sources) {
  switch (variant) {
    case PromptVariant::p1:
      return item.at(lang).question;
    case PromptVariant::p2: {
      if (item.relation.empty() || item.entity.empty()) return item.at(lang).question;
      auto rel = sources.templates.find(item.relation);
      if (rel == sources.templates.end() || !rel->second.contains(lang)) {
        throw CollectionError("no p2 template for relation \"" + item.relation + "\" in " +
                              lang.str());
      }
      std::string q = rel->second.at(lang);
      replace_all(q, "{entity}", item.entity);
      return q;
    }
    case PromptVariant::p3: {
      auto it = sources.paraphrases.find(item.id);
      if (it == sources.paraphrases.end() || !it->second.contains(lang)) {
        throw CollectionError("no p3 paraphrase for item " + item.id + " in " + lang.str());
      }
      return it->second.at(lang);
    }
    case PromptVariant::custom: {
      std::string q = sources.custom_template;
      replace_all(q, "{question}", item.at(lang).question);
      replace_all(q, "{entity}", item.entity);
      replace_all(q, "{relation}", item.relation);
      return q;
    }
  }
  return item.at(lang).question;
}

std::string build_prompt(const QAItem& item, const LanguageCode& lang,
                         const std::vector<QAItem>& exemplars, PromptVariant variant,
                         const PromptSources& sources) {
  std::string prompt;
  for (const auto& ex : exemplars) {
    const auto& e = ex.at(lang);
    prompt += e.question + "\n" + kAnswerCue + " " + e.answer + "\n\n";
  }
  prompt += variant_question(item, lang, variant, sources) + "\n" + kAnswerCue;
  return prompt;
}

json build_messages(const std::string& system_prompt, const std::string& question,
                    const LanguageCode& lang, const std::vector<QAItem>& exemplars) {
  json messages = json::array();
  if (!system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", system_prompt}});
  for (const auto& ex : exemplars) {
    const auto& e = ex.at(lang);
    messages.push_back({{"role", "user"}, {"content", e.question}});
    messages.push_back({{"role", "assistant"}, {"content", e.answer}});
  }
  messages.push_back({{"role", "user"}, {"content", question}});
  return messages;
}

std::string extract_answer(const std::string& raw, bool first_line_only) {
  static constexpr const char* kSpace = " \t\r\n\f\v";
  const auto b = raw.find_first_not_of(kSpace);
  if (b == std::string::npos) return {};
  std::string s = raw.substr(b, raw.find_last_not_of(kSpace) - b + 1);
  if (first_line_only) {
    const auto nl = s.find_first_of("\r\n");
    if (nl != std::string::npos) s.erase(nl);
    const auto e = s.find_last_not_of(kSpace);
    s.erase(e == std::string::npos ? 0 : e + 1);
  }
  return nfc(s);
}

// ---------------------------------------------------------------------------
// Manifest

ordered_json RunManifest::to_json() const {
  ordered_json out;
  out["run_id"] = run_id;
  out["dataset_sha256"] = dataset_sha256;
  out["started_at"] = started_at;
  out["finished_at"] = finished_at;
  out["complete"] = complete;
  out["config"] = config;
  ordered_json ex = ordered_json::object();
  for (const auto& [domain, ids] : exemplars) ex[domain] = ids;
  out["exemplars"] = std::move(ex);
  ordered_json reqs = ordered_json::array();
  for (const auto& r : requests) {
    ordered_json o;
    o["lang"] = r.lang.str();
    o["id"] = r.id;
    o["status"] = r.status == CellStatus::ok ? "ok" : "failed";
    o["attempts"] = r.attempts;
    if (r.resumed) o["resumed"] = true;
    if (!r.error.empty()) o["error"] = r.error;
    reqs.push_back(std::move(o));
  }
  out["requests"] = std::move(reqs);
  return out;
}

// ---------------------------------------------------------------------------
// Collection

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class TokenBucket {
 public:
  explicit TokenBucket(double rate) : rate_(rate), tokens_(std::max(1.0, rate)) {}

  void acquire(std::stop_token stop) {
    if (rate_ <= 0.0) return;
    std::unique_lock lock(mutex_);
    while (true) {
      const auto now = Clock::now();
      tokens_ = std::min(std::max(1.0, rate_),
                         tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
      last_ = now;
      if (tokens_ >= 1.0 || stop.stop_requested()) {
        tokens_ -= 1.0;
        return;
      }
      const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
      lock.unlock();
      std::this_thread::sleep_for(wait);
      lock.lock();
    }
  }

 private:
  using Clock = std::chrono::steady_clock;
  double rate_;
  double tokens_;
  Clock::time_point last_ = Clock::now();
  std::mutex mutex_;
};

struct Cell {
  LanguageCode lang;
  std::string id;
  std::string domain;  // exemplar pool key
  std::string question;
};

struct Outcome {
  AnswerRecord record;
  std::string error;
  bool fatal = false;
};

Outcome request_cell(const CollectionConfig& cfg, const Cell& cell,
                     const std::vector<QAItem>& exemplars, const std::string& token,
                     TokenBucket& bucket, std::stop_token stop) {
  json body = cfg.decoding.is_object() ? cfg.decoding : json::object();
  body["model"] = cfg.model_id;
  body["messages"] = build_messages(cfg.system_prompt, cell.question, cell.lang, exemplars);
  const std::string payload = body.dump();
  detail::Headers headers;
  if (!token.empty()) headers.emplace_back("Authorization", "Bearer " + token);

  Outcome out;
  out.record.lang = cell.lang;
  out.record.id = cell.id;
  for (int attempt = 1; attempt <= cfg.retry.max_attempts; ++attempt) {
    bucket.acquire(stop);
    out.record.attempts = attempt;
    const auto res = detail::http_post_json(cfg.endpoint, payload, headers, cfg.timeout);
    if (res.status == 401 || res.status == 403) {
      out.fatal = true;
      out.error = "endpoint rejected credentials (HTTP " + std::to_string(res.status) + ")";
      out.record.status = CellStatus::failed;
      return out;
    }
    if (res.status == 200) {
      try {
        const auto reply = json::parse(res.body);
        const auto& content = reply.at("choices").at(0).at("message").at("content");
        out.record.raw = content.get<std::string>();
        out.record.answer = extract_answer(out.record.raw, cfg.first_line_only);
        out.record.status = CellStatus::ok;
        out.error.clear();
        return out;
      } catch (const json::exception& e) {
        out.error = std::string("malformed response: ") + e.what();
      }
    } else if (res.status == 0) {
      out.error = "transport error: " + res.error;
    } else {
      out.error = "HTTP " + std::to_string(res.status);
      if (!detail::retryable_status(res.status)) break;
    }
    if (attempt < cfg.retry.max_attempts) {
      std::this_thread::sleep_for(backoff_delay(cfg.retry, attempt));
    }
  }
  out.record.status = CellStatus::failed;
  out.record.raw.clear();
  out.record.answer.clear();
  return out;
}

ordered_json answers_header(const CollectionConfig& cfg, const std::string& run_id) {
  ordered_json h;
  h["schema"] = kAnswersSchema;
  h["run_id"] = run_id;
  h["model_id"] = cfg.model_id;
  h["prompt_variant"] = to_string(cfg.variant);
  h["seed"] = cfg.exemplar_seed;
  h["shots"] = cfg.shots;
  h["dataset_sha256"] = cfg.dataset_sha256;
  h["endpoint"] = cfg.endpoint;
  h["decoding"] = cfg.decoding;
  return h;
}

void check_resume_compatible(const ordered_json& existing, const ordered_json& wanted,
                             const std::filesystem::path& path) {
  for (const char* key : {"model_id", "prompt_variant", "seed", "shots", "dataset_sha256"}) {
    if (existing.contains(key) && existing.at(key) != wanted.at(key)) {
      throw CollectionError(path.string() + " was written by a different run (" + key + ": " +
                            existing.at(key).dump() + " vs " + wanted.at(key).dump() + ")");
    }
  }
}

}  // namespace

CollectionResult collect_answers(const Dataset& dataset, const CollectionConfig& cfg,
                                 const std::filesystem::path& answers_path, std::stop_token stop) {
  cfg.validate();
  const Dataset slice = cfg.languages.empty() ? dataset : dataset.with_languages(cfg.languages);

  // Exemplars per domain, shared across languages so prompts stay aligned.
  std::map<std::string, std::vector<QAItem>> exemplars;
  auto pool_for = [&](const std::string& domain) -> const std::vector<QAItem>& {
    auto it = exemplars.find(domain);
    if (it != exemplars.end()) return it->second;
    static const std::vector<QAItem> kEmpty;
    auto pool = slice.few_shot_pool.find(domain);
    const auto& items = pool == slice.few_shot_pool.end() ? kEmpty : pool->second;
    return exemplars.emplace(domain, sample_exemplars(items, cfg.shots, cfg.exemplar_seed, domain))
        .first->second;
  };

  std::vector<Cell> cells;
  for (const auto& lang : slice.languages) {
    for (const auto& item : slice.qa_items) {
      pool_for(item.domain);
      cells.push_back({lang, item.id, item.domain,
                       variant_question(item, lang, cfg.variant, cfg.sources)});
    }
    for (const auto& item : slice.timeliness_items) {
      pool_for(kTimelinessPool);
      QAItem view;
      view.id = item.id;
      view.domain = kTimelinessPool;
      view.entries[lang] = QAEntry{item.at(lang).question, item.at(lang).candidates.front()};
      cells.push_back({lang, item.id, kTimelinessPool,
                       variant_question(view, lang, cfg.variant, cfg.sources)});
    }
  }

  const std::string run_id =
      !cfg.run_id.empty()
          ? cfg.run_id
          : sha256_hex(cfg.model_id + "\n" + to_string(cfg.variant) + "\n" +
                       std::to_string(cfg.exemplar_seed) + "\n" + std::to_string(cfg.shots) +
                       "\n" + cfg.dataset_sha256)
                .substr(0, 16);
  const ordered_json header = answers_header(cfg, run_id);

  std::map<CellKey, AnswerRecord> done;
  if (auto existing = read_answers_file(answers_path)) {
    check_resume_compatible(existing->header, header, answers_path);
    for (auto& [key, record] : existing->cells) {
      if (record.status == CellStatus::ok) done.emplace(key, record);
    }
  }

  RunManifest manifest;
  manifest.run_id = run_id;
  manifest.config = cfg.snapshot();
  manifest.dataset_sha256 = cfg.dataset_sha256;
  manifest.started_at = utc_now();
  for (const auto& [domain, items] : exemplars) {
    auto& ids = manifest.exemplars[domain];
    for (const auto& ex : items) ids.push_back(ex.id);
  }

  std::vector<const Cell*> pending;
  for (const auto& cell : cells) {
    if (!done.contains({cell.lang, cell.id})) pending.push_back(&cell);
  }

  AnswersWriter writer(answers_path, header);
  const char* token_env = std::getenv(kLlmTokenEnv);
  const std::string token = token_env != nullptr ? token_env : "";
  TokenBucket bucket(cfg.requests_per_second);

  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex log_mutex;
  std::map<CellKey, RequestLog> logs;
  std::string fatal_error;

  auto worker = [&] {
    while (!abort.load() && !stop.stop_requested()) {
      const std::size_t k = next.fetch_add(1);
      if (k >= pending.size()) return;
      const Cell& cell = *pending[k];
      Outcome out = request_cell(cfg, cell, exemplars.at(cell.domain), token, bucket, stop);
      std::lock_guard lock(log_mutex);
      if (out.fatal) {
        abort.store(true);
        if (fatal_error.empty()) fatal_error = out.error;
        return;
      }
      writer.append(out.record);
      logs[{cell.lang, cell.id}] =
          RequestLog{cell.lang, cell.id, out.record.status, out.record.attempts, false, out.error};
    }
  };

  {
    const auto threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.concurrency),
                                               std::max<std::size_t>(pending.size(), 1));
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (!fatal_error.empty()) throw CollectionError(fatal_error);

  manifest.complete = true;
  for (const auto& cell : cells) {
    const CellKey key{cell.lang, cell.id};
    if (done.contains(key)) {
      manifest.requests.push_back({cell.lang, cell.id, CellStatus::ok, 0, true, {}});
    } else if (auto it = logs.find(key); it != logs.end()) {
      manifest.requests.push_back(it->second);
    } else {
      manifest.complete = false;
    }
  }
  manifest.finished_at = utc_now();

  const auto manifest_path = std::filesystem::path(answers_path.string() + ".manifest.json");
  {
    std::ofstream out(manifest_path);
    if (!out) throw IoError("cannot write " + manifest_path.string());
    out << manifest.to_json().dump(2) << '\n';
  }

  auto file = read_answers_file(answers_path);
  return {file->to_answer_set(), std::move(manifest)};
}

}  // namespace xlc
