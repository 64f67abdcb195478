#pragma once

// Answer collection over a chat-completions endpoint with k-shot prompts.
//
// Request body: {"model", "messages":[system, (user q, assistant a) per
// exemplar, user question], ...decoding options}. The reply text is read from
// choices[0].message.content. A bearer token is taken from XLC_LLM_API_KEY
// when set. 401/403 abort the run; 408/429/5xx, transport errors and
// malformed replies are retried with jittered exponential backoff, then the
// cell is recorded as failed with an empty answer.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stop_token>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlc/answers.hpp"
#include "xlc/dataset.hpp"
#include "xlc/retry.hpp"

namespace xlc {

inline constexpr const char* kLlmTokenEnv = "XLC_LLM_API_KEY";
inline constexpr const char* kTimelinessPool = "timeliness";
inline constexpr const char* kAnswerCue = "Answer:";
inline constexpr const char* kDefaultSystemPrompt =
    "Answer the question with a short factual answer in the language of the question.";

class CollectionError : public Error {
 public:
  using Error::Error;
};

// Inputs for prompt variants beyond p1.
struct PromptSources {
  // p2: relation -> language -> template containing "{entity}".
  std::map<std::string, std::map<LanguageCode, std::string>> templates;
  // p3: item id -> language -> paraphrased question.
  std::map<std::string, std::map<LanguageCode, std::string>> paraphrases;
  // custom: template with any of "{question}", "{entity}", "{relation}".
  std::string custom_template;
};

// Reads {"relation": {"En": "...{entity}..."}} (templates) or
// {"item id": {"En": "..."}} (paraphrases).
std::map<std::string, std::map<LanguageCode, std::string>> read_text_table(
    const std::filesystem::path& path);

struct CollectionConfig {
  std::string endpoint;
  std::string model_id;
  nlohmann::json decoding = {{"temperature", 0}, {"max_tokens", 64}};
  int shots = 5;
  std::uint64_t exemplar_seed = 0;
  int concurrency = 4;
  std::chrono::milliseconds timeout{60000};
  RetryPolicy retry;
  double requests_per_second = 0.0;  // 0 disables rate limiting
  PromptVariant variant = PromptVariant::p1;
  PromptSources sources;
  Languages languages;  // empty: all declared languages
  std::string run_id;   // empty: derived from model, variant, seed and dataset
  std::string dataset_sha256;
  std::string system_prompt = kDefaultSystemPrompt;
  bool first_line_only = true;

  void validate() const;
  nlohmann::ordered_json snapshot() const;
};

// Deterministic k-subset of the pool in sampled order, keyed by (seed, domain).
std::vector<QAItem> sample_exemplars(const std::vector<QAItem>& pool, int k, std::uint64_t seed,
                                     const std::string& domain);

// Question text for the given variant.
std::string variant_question(const QAItem& item, const LanguageCode& lang, PromptVariant variant,
                             const PromptSources& sources = {});

// Exemplar pairs ("<q>\nAnswer: <a>\n\n") then "<question>\nAnswer:".
std::string build_prompt(const QAItem& item, const LanguageCode& lang,
                         const std::vector<QAItem>& exemplars, PromptVariant variant,
                         const PromptSources& sources = {});

// The same content as chat turns.
nlohmann::json build_messages(const std::string& system_prompt, const std::string& question,
                              const LanguageCode& lang, const std::vector<QAItem>& exemplars);

// Default answer post-processor: trim, then keep the first line.
std::string extract_answer(const std::string& raw, bool first_line_only = true);

struct RequestLog {
  LanguageCode lang;
  std::string id;
  CellStatus status = CellStatus::ok;
  int attempts = 0;
  bool resumed = false;  // already answered by an earlier run
  std::string error;
};

struct RunManifest {
  std::string run_id;
  nlohmann::ordered_json config;
  std::string dataset_sha256;
  std::string started_at;
  std::string finished_at;
  bool complete = false;
  std::map<std::string, std::vector<std::string>> exemplars;  // domain -> ids in order
  std::vector<RequestLog> requests;

  nlohmann::ordered_json to_json() const;
};

struct CollectionResult {
  AnswerSet answers;
  RunManifest manifest;
};

// Collects every (language, item) cell not already answered in
// `answers_path`, appending records as they complete, then writes
// "<answers_path>.manifest.json". A stop request finishes in-flight cells and
// returns early with manifest.complete == false.
CollectionResult collect_answers(const Dataset& dataset, const CollectionConfig& cfg,
                                 const std::filesystem::path& answers_path,
                                 std::stop_token stop = {});

}  // namespace xlc
