#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "support/mock_servers.hpp"
#include "xlc/answers.hpp"
#include "xlc/dataset.hpp"
#include "xlc/embedding.hpp"

namespace fixtures {

std::filesystem::path data_path(const std::string& name);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& content);

// Fixed text -> vector table; unknown texts throw.
class TableProvider final : public xlc::EmbeddingProvider {
 public:
  explicit TableProvider(std::map<std::string, std::vector<float>> table)
      : table_(std::move(table)) {}
  std::vector<std::vector<float>> fetch(const std::vector<std::string>& texts) override;
  int calls() const { return calls_; }

 private:
  std::map<std::string, std::vector<float>> table_;
  int calls_ = 0;
};

// Every declared (language, item) answered with its ground truth; timeliness
// items with their newest candidate.
xlc::AnswerSet ground_truth_answers(const xlc::Dataset& d);

// Deterministic chat-completions behaviour for the bundled 24-item fixture:
// a mix of exact, padded, wrong, and "don't know" answers, plus timeliness
// answers matching different candidate ranks per language.
std::string e2e_answer_for(const xlc::Dataset& d, const std::string& question);

// Handler for mock::HttpServer built on e2e_answer_for.
mock::HttpServer::Handler e2e_chat_handler(const xlc::Dataset& d);

xlc::EmbeddingProviderConfig mock_provider_config(int dims = 64, std::uint64_t seed = 7);

}  // namespace fixtures

namespace fixtures {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_xlc(const std::vector<std::string>& args);

// collect -> embed -> score over makqa_e2e with the mock chat server and the
// mock embedder (64 dims, seed 7). Writes into `dir`; returns the score step.
CliResult run_e2e_pipeline(const std::filesystem::path& dir, const std::string& languages = "");

std::filesystem::path golden_path(const std::string& name);

}  // namespace fixtures
