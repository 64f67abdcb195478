#include <chrono>
#include <cstdlib>
#include <set>
#include <stop_token>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "support/fixtures.hpp"
#include "support/mock_servers.hpp"
#include "xlc/collection.hpp"

using fixtures::TempDir;
using xlc::LanguageCode;
using xlc::PromptVariant;

namespace {

const LanguageCode En("En");
const LanguageCode De("De");
const LanguageCode Zh("Zh");

std::vector<xlc::QAItem> numbered_pool(int n) {
  std::vector<xlc::QAItem> pool;
  for (int k = 0; k < n; ++k) {
    xlc::QAItem item;
    item.id = "ex-" + std::to_string(k);
    item.domain = "geography";
    item.entries[En] = {"question " + std::to_string(k), "answer " + std::to_string(k)};
    pool.push_back(item);
  }
  return pool;
}

xlc::Dataset e2e() { return xlc::load_dataset(fixtures::data_path("makqa_e2e.jsonl")); }

xlc::CollectionConfig e2e_config(const std::string& url) {
  xlc::CollectionConfig cfg;
  cfg.endpoint = url;
  cfg.model_id = "mock-model";
  cfg.shots = 2;
  cfg.exemplar_seed = 7;
  cfg.concurrency = 4;
  cfg.timeout = std::chrono::milliseconds(5000);
  cfg.retry.max_attempts = 3;
  cfg.retry.initial_backoff = std::chrono::milliseconds(1);
  cfg.retry.max_backoff = std::chrono::milliseconds(4);
  cfg.dataset_sha256 = xlc::file_sha256(fixtures::data_path("makqa_e2e.jsonl"));
  return cfg;
}

}  // namespace

TEST(Exemplars, DeterministicDistinctSubset) {
  const auto pool = numbered_pool(20);
  EXPECT_TRUE(xlc::sample_exemplars(pool, 0, 1, "geography").empty());
  const auto a = xlc::sample_exemplars(pool, 5, 42, "geography");
  const auto b = xlc::sample_exemplars(pool, 5, 42, "geography");
  ASSERT_EQ(a.size(), 5u);
  EXPECT_EQ(a, b);
  std::set<std::string> ids;
  for (const auto& e : a) ids.insert(e.id);
  EXPECT_EQ(ids.size(), 5u);
  EXPECT_NE(xlc::sample_exemplars(pool, 5, 43, "geography"), a);
  EXPECT_NE(xlc::sample_exemplars(pool, 5, 42, "history"), a);
}

TEST(Exemplars, PoolTooSmall) {
  EXPECT_THROW(xlc::sample_exemplars(numbered_pool(3), 4, 1, "geography"), xlc::CollectionError);
}

TEST(Prompt, ZeroShot) {
  const auto d = xlc::load_dataset(fixtures::data_path("makqa_small.jsonl"));
  EXPECT_EQ(xlc::build_prompt(*d.find_qa("geo-01"), En, {}, PromptVariant::p1),
            "What is the capital of France?\nAnswer:");
}

TEST(Prompt, ExemplarsInSampledOrder) {
  const auto pool = numbered_pool(2);
  xlc::QAItem item = pool[0];
  item.entries[En] = {"final?", "x"};
  EXPECT_EQ(xlc::build_prompt(item, En, {pool[1], pool[0]}, PromptVariant::p1),
            "question 1\nAnswer: answer 1\n\n"
            "question 0\nAnswer: answer 0\n\n"
            "final?\nAnswer:");
}

TEST(Prompt, TemplateVariant) {
  const auto d = xlc::load_dataset(fixtures::data_path("makqa_small.jsonl"));
  xlc::PromptSources sources;
  sources.templates = xlc::read_text_table(fixtures::data_path("templates_p2.json"));
  EXPECT_EQ(xlc::variant_question(*d.find_qa("geo-02"), En, PromptVariant::p2, sources),
            "In which country is Buenos Aires located?");
  EXPECT_EQ(xlc::variant_question(*d.find_qa("geo-01"), En, PromptVariant::p2, sources),
            "What is the capital of France?");
  sources.templates.erase("country");
  EXPECT_THROW(xlc::variant_question(*d.find_qa("geo-02"), En, PromptVariant::p2, sources),
               xlc::CollectionError);
}

TEST(Prompt, ParaphraseAndCustomVariants) {
  const auto d = xlc::load_dataset(fixtures::data_path("makqa_small.jsonl"));
  const auto& item = *d.find_qa("geo-01");
  xlc::PromptSources sources;
  sources.paraphrases["geo-01"][En] = "France's capital city is?";
  EXPECT_EQ(xlc::variant_question(item, En, PromptVariant::p3, sources),
            "France's capital city is?");
  EXPECT_THROW(xlc::variant_question(item, Zh, PromptVariant::p3, sources), xlc::CollectionError);
  sources.custom_template = "Q: {question} ({relation} of {entity})";
  EXPECT_EQ(xlc::variant_question(item, En, PromptVariant::custom, sources),
            "Q: What is the capital of France? (capital of France)");
}

TEST(Prompt, ChatMessages) {
  const auto pool = numbered_pool(2);
  const auto m = xlc::build_messages("sys", "final?", En, pool);
  ASSERT_EQ(m.size(), 6u);
  EXPECT_EQ(m[0]["role"], "system");
  EXPECT_EQ(m[1]["content"], "question 0");
  EXPECT_EQ(m[2]["role"], "assistant");
  EXPECT_EQ(m[2]["content"], "answer 0");
  EXPECT_EQ(m[5]["content"], "final?");
  EXPECT_EQ(xlc::build_messages("", "q", En, {}).size(), 1u);
}

TEST(Prompt, ExtractAnswer) {
  EXPECT_EQ(xlc::extract_answer("  Paris\nThis is a well-known fact."), "Paris");
  EXPECT_EQ(xlc::extract_answer("  Paris\nmore", false), "Paris\nmore");
  EXPECT_EQ(xlc::extract_answer(" \n "), "");
  EXPECT_EQ(xlc::extract_answer("Cafe\xCC\x81 "), "Caf\xC3\xA9");
}

TEST(Collect, EveryCellAnsweredAgainstMock) {
  const auto d = e2e();
  mock::HttpServer server("/v1/chat/completions", fixtures::e2e_chat_handler(d));
  TempDir dir;
  const auto result = xlc::collect_answers(d, e2e_config(server.url()), dir / "answers.jsonl");
  EXPECT_TRUE(result.manifest.complete);
  EXPECT_EQ(result.manifest.requests.size(), 72u);
  EXPECT_EQ(result.answers.answers.size(), 72u);
  EXPECT_EQ(server.calls(), 72);
  EXPECT_NO_THROW(xlc::check_coverage(result.answers, d));
  for (const auto& lang : d.languages) {
    for (const auto& item : d.qa_items) {
      EXPECT_EQ(result.answers.at(lang, item.id),
                xlc::extract_answer(fixtures::e2e_answer_for(d, item.at(lang).question)));
    }
  }
  EXPECT_EQ(result.answers.model_id, "mock-model");
  EXPECT_EQ(result.manifest.run_id.size(), 16u);
  EXPECT_EQ(result.manifest.exemplars.at("geography").size(), 2u);
  EXPECT_EQ(result.manifest.exemplars.at("timeliness").size(), 2u);

  const auto manifest = nlohmann::json::parse(fixtures::read_file(dir / "answers.jsonl.manifest.json"));
  EXPECT_EQ(manifest["run_id"], result.manifest.run_id);
  EXPECT_TRUE(manifest["complete"].get<bool>());
  EXPECT_EQ(manifest["requests"].size(), 72u);
  EXPECT_EQ(manifest["config"]["model_id"], "mock-model");
  EXPECT_EQ(xlc::load_answers(dir / "answers.jsonl"), result.answers);
}

TEST(Collect, ManifestReconstructsPrompt) {
  const auto d = e2e();
  std::mutex mutex;
  std::map<std::string, nlohmann::json> seen;
  auto inner = fixtures::e2e_chat_handler(d);
  mock::HttpServer server("/v1/chat/completions", [&](const nlohmann::json& req, int i) {
    std::lock_guard lock(mutex);
    seen[mock::last_user_message(req)] = req;
    return inner(req, i);
  });
  TempDir dir;
  const auto cfg = e2e_config(server.url());
  const auto result = xlc::collect_answers(d, cfg, dir / "answers.jsonl");
  const auto& item = d.qa_items.front();
  std::vector<xlc::QAItem> exemplars;
  for (const auto& id : result.manifest.exemplars.at(item.domain)) {
    for (const auto& ex : d.few_shot_pool.at(item.domain)) {
      if (ex.id == id) exemplars.push_back(ex);
    }
  }
  ASSERT_EQ(exemplars.size(), 2u);
  const auto& req = seen.at(item.at(De).question);
  EXPECT_EQ(req["messages"], xlc::build_messages(cfg.system_prompt, item.at(De).question, De, exemplars));
  EXPECT_EQ(req["model"], "mock-model");
  EXPECT_EQ(req["temperature"], 0);
}

TEST(Collect, RetriesTransientFailures) {
  const auto d = e2e();
  auto inner = fixtures::e2e_chat_handler(d);
  mock::HttpServer server("/v1/chat/completions", [&](const nlohmann::json& req, int i) {
    if (i < 2) return mock::Reply{503, "busy"};
    return inner(req, i);
  });
  TempDir dir;
  auto cfg = e2e_config(server.url());
  cfg.concurrency = 1;
  cfg.languages = {En, De};
  const auto result = xlc::collect_answers(d, cfg, dir / "answers.jsonl");
  EXPECT_TRUE(result.manifest.complete);
  EXPECT_EQ(result.manifest.requests.front().attempts, 3);
  EXPECT_EQ(result.manifest.requests.front().status, xlc::CellStatus::ok);
  EXPECT_EQ(server.calls(), 48 + 2);
}

TEST(Collect, MalformedReplyIsRetried) {
  const auto d = e2e();
  auto inner = fixtures::e2e_chat_handler(d);
  mock::HttpServer server("/v1/chat/completions", [&](const nlohmann::json& req, int i) {
    if (i == 0) return mock::Reply{200, R"({"choices":[]})"};
    return inner(req, i);
  });
  TempDir dir;
  auto cfg = e2e_config(server.url());
  cfg.concurrency = 1;
  const auto result = xlc::collect_answers(d, cfg, dir / "answers.jsonl");
  EXPECT_EQ(result.manifest.requests.front().attempts, 2);
  EXPECT_EQ(result.manifest.requests.front().status, xlc::CellStatus::ok);
}

TEST(Collect, ExhaustedCellRecordedAsFailed) {
  const auto d = e2e();
  const std::string dead = d.qa_items[0].at(En).question;
  auto inner = fixtures::e2e_chat_handler(d);
  mock::HttpServer server("/v1/chat/completions", [&](const nlohmann::json& req, int i) {
    if (mock::last_user_message(req) == dead) return mock::Reply{500, "boom"};
    return inner(req, i);
  });
  TempDir dir;
  const auto result = xlc::collect_answers(d, e2e_config(server.url()), dir / "answers.jsonl");
  EXPECT_TRUE(result.manifest.complete);
  EXPECT_EQ(result.answers.at(En, d.qa_items[0].id), "");
  int failed = 0;
  for (const auto& r : result.manifest.requests) {
    if (r.status == xlc::CellStatus::failed) {
      ++failed;
      EXPECT_EQ(r.attempts, 3);
      EXPECT_FALSE(r.error.empty());
    }
  }
  EXPECT_EQ(failed, 1);
}

TEST(Collect, UnauthorizedAbortsRun) {
  const auto d = e2e();
  mock::HttpServer server("/v1/chat/completions",
                          [](const nlohmann::json&, int) { return mock::Reply{401, "no"}; });
  TempDir dir;
  EXPECT_THROW(xlc::collect_answers(d, e2e_config(server.url()), dir / "answers.jsonl"),
               xlc::CollectionError);
  EXPECT_LE(server.calls(), 4);
}

TEST(Collect, ConcurrencyIsBounded) {
  const auto d = e2e();
  mock::HttpServer server("/v1/chat/completions", fixtures::e2e_chat_handler(d),
                          std::chrono::milliseconds(5));
  TempDir dir;
  auto cfg = e2e_config(server.url());
  cfg.concurrency = 3;
  xlc::collect_answers(d, cfg, dir / "answers.jsonl");
  EXPECT_LE(server.max_in_flight(), 3);
  EXPECT_GE(server.max_in_flight(), 2);
}

TEST(Collect, BearerTokenFromEnvironment) {
  const auto d = e2e();
  mock::HttpServer server("/v1/chat/completions", fixtures::e2e_chat_handler(d));
  TempDir dir;
  auto cfg = e2e_config(server.url());
  cfg.languages = {En, Zh};
  ::setenv(xlc::kLlmTokenEnv, "sk-test", 1);
  xlc::collect_answers(d, cfg, dir / "answers.jsonl");
  ::unsetenv(xlc::kLlmTokenEnv);
  EXPECT_EQ(server.last_authorization(), "Bearer sk-test");
}

TEST(Collect, RateLimitSpacesRequests) {
  const auto d = xlc::load_dataset(fixtures::data_path("makqa_small.jsonl"));
  mock::HttpServer server("/v1/chat/completions",
                          [](const nlohmann::json&, int) { return mock::chat_reply("x"); });
  TempDir dir;
  xlc::CollectionConfig cfg;
  cfg.endpoint = server.url();
  cfg.model_id = "m";
  cfg.shots = 0;
  cfg.concurrency = 4;
  cfg.requests_per_second = 4.0;
  const auto start = std::chrono::steady_clock::now();
  const auto result = xlc::collect_answers(d, cfg, dir / "answers.jsonl");
  const auto elapsed = std::chrono::steady_clock::now() - start;
  EXPECT_EQ(server.calls(), 8);
  EXPECT_TRUE(result.manifest.complete);
  EXPECT_GE(elapsed, std::chrono::milliseconds(900));
}

TEST(Resume, StoppedRunFinishesToSameAnswers) {
  const auto d = e2e();
  TempDir dir;
  mock::HttpServer reference("/v1/chat/completions", fixtures::e2e_chat_handler(d));
  const auto full = xlc::collect_answers(d, e2e_config(reference.url()), dir / "full.jsonl");

  std::stop_source stop;
  auto inner = fixtures::e2e_chat_handler(d);
  mock::HttpServer server("/v1/chat/completions", [&](const nlohmann::json& req, int i) {
    if (i == 29) stop.request_stop();
    return inner(req, i);
  });
  auto cfg = e2e_config(server.url());
  cfg.concurrency = 1;
  const auto partial = xlc::collect_answers(d, cfg, dir / "resumed.jsonl", stop.get_token());
  EXPECT_FALSE(partial.manifest.complete);
  EXPECT_EQ(partial.answers.answers.size(), 30u);

  const auto resumed = xlc::collect_answers(d, cfg, dir / "resumed.jsonl");
  EXPECT_TRUE(resumed.manifest.complete);
  EXPECT_EQ(server.calls(), 72);
  EXPECT_EQ(resumed.answers, full.answers);
  int skipped = 0;
  for (const auto& r : resumed.manifest.requests) skipped += r.resumed ? 1 : 0;
  EXPECT_EQ(skipped, 30);
}

TEST(Resume, TornFinalLineIsRedone) {
  const auto d = e2e();
  TempDir dir;
  mock::HttpServer server("/v1/chat/completions", fixtures::e2e_chat_handler(d));
  const auto cfg = e2e_config(server.url());
  const auto full = xlc::collect_answers(d, cfg, dir / "full.jsonl");

  const std::string text = fixtures::read_file(dir / "full.jsonl");
  std::size_t cut = 0;
  for (int lines = 0; lines < 11; ++lines) cut = text.find('\n', cut) + 1;
  const std::size_t next = text.find('\n', cut);
  fixtures::write_file(dir / "torn.jsonl", text.substr(0, cut + (next - cut) / 2));

  const auto torn = xlc::read_answers_file(dir / "torn.jsonl");
  ASSERT_TRUE(torn.has_value());
  EXPECT_EQ(torn->cells.size(), 10u);

  const int before = server.calls();
  const auto resumed = xlc::collect_answers(d, cfg, dir / "torn.jsonl");
  EXPECT_EQ(server.calls() - before, 62);
  EXPECT_EQ(resumed.answers, full.answers);
  const auto reread = xlc::read_answers_file(dir / "torn.jsonl");
  EXPECT_EQ(reread->to_answer_set(), full.answers);
}

TEST(Resume, DifferentRunRejected) {
  const auto d = e2e();
  TempDir dir;
  mock::HttpServer server("/v1/chat/completions", fixtures::e2e_chat_handler(d));
  auto cfg = e2e_config(server.url());
  cfg.languages = {En, De};
  xlc::collect_answers(d, cfg, dir / "answers.jsonl");
  cfg.model_id = "other-model";
  EXPECT_THROW(xlc::collect_answers(d, cfg, dir / "answers.jsonl"), xlc::CollectionError);
  cfg.model_id = "mock-model";
  cfg.exemplar_seed = 8;
  EXPECT_THROW(xlc::collect_answers(d, cfg, dir / "answers.jsonl"), xlc::CollectionError);
}

TEST(AnswersFile, LastOkRecordWins) {
  TempDir dir;
  fixtures::write_file(dir / "a.jsonl",
                       R"({"schema":"xlc-answers/1","run_id":"r","model_id":"m"})"
                       "\n"
                       R"({"lang":"En","id":"q1","raw":"A","answer":"A","status":"ok","attempts":1})"
                       "\n"
                       R"({"lang":"En","id":"q1","raw":"","answer":"","status":"failed","attempts":3})"
                       "\n"
                       R"({"lang":"En","id":"q2","raw":"","answer":"","status":"failed","attempts":3})"
                       "\n"
                       R"({"lang":"En","id":"q2","raw":"B","answer":"B","status":"ok","attempts":1})"
                       "\n"
                       R"({"lang":"En","id":"q3","raw":"C","ans)");
  const auto file = xlc::read_answers_file(dir / "a.jsonl");
  ASSERT_TRUE(file.has_value());
  EXPECT_EQ(file->cells.size(), 2u);
  const auto set = file->to_answer_set();
  EXPECT_EQ(set.at(En, "q1"), "A");
  EXPECT_EQ(set.at(En, "q2"), "B");
  EXPECT_EQ(set.model_id, "m");
  EXPECT_FALSE(xlc::read_answers_file(dir / "absent.jsonl").has_value());
  EXPECT_THROW(xlc::load_answers(dir / "absent.jsonl"), xlc::IoError);
  fixtures::write_file(dir / "b.jsonl", R"({"schema":"other"})"
                                        "\n");
  EXPECT_THROW(xlc::read_answers_file(dir / "b.jsonl"), xlc::Error);
}

TEST(AnswersFile, CoverageNamesMissingCells) {
  const auto d = xlc::load_dataset(fixtures::data_path("makqa_small.jsonl"));
  auto answers = fixtures::ground_truth_answers(d);
  EXPECT_NO_THROW(xlc::check_coverage(answers, d));
  answers.answers.erase({Zh, "geo-01"});
  try {
    xlc::check_coverage(answers, d);
    FAIL() << "expected coverage error";
  } catch (const xlc::Error& e) {
    EXPECT_NE(std::string(e.what()).find("Zh/geo-01"), std::string::npos) << e.what();
  }
}
