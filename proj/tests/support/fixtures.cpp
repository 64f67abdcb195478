#include "support/fixtures.hpp"

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "xlc/cli.hpp"

namespace fixtures {

namespace fs = std::filesystem;

fs::path data_path(const std::string& name) { return fs::path(XLC_TEST_DATA_DIR) / name; }

TempDir::TempDir() {
  std::random_device rd;
  path_ = fs::temp_directory_path() / ("xlc-test-" + std::to_string(rd()) + std::to_string(rd()));
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

std::vector<std::vector<float>> TableProvider::fetch(const std::vector<std::string>& texts) {
  ++calls_;
  std::vector<std::vector<float>> out;
  for (const auto& t : texts) {
    auto it = table_.find(t);
    if (it == table_.end()) throw std::runtime_error("TableProvider: unknown text " + t);
    out.push_back(it->second);
  }
  return out;
}

xlc::AnswerSet ground_truth_answers(const xlc::Dataset& d) {
  xlc::AnswerSet a;
  a.run_id = "ground-truth";
  a.model_id = "oracle";
  for (const auto& lang : d.languages) {
    for (const auto& item : d.qa_items) a.set(lang, item.id, item.at(lang).answer);
    for (const auto& item : d.timeliness_items) {
      a.set(lang, item.id, item.at(lang).candidates.front());
    }
  }
  return a;
}

std::string e2e_answer_for(const xlc::Dataset& d, const std::string& question) {
  for (std::size_t li = 0; li < d.languages.size(); ++li) {
    const auto& lang = d.languages[li];
    for (std::size_t k = 0; k < d.qa_items.size(); ++k) {
      const auto& item = d.qa_items[k];
      if (item.at(lang).question != question) continue;
      const std::string& truth = item.at(lang).answer;
      std::size_t pick = (k * 3) % 5;
      if (k % 6 == li) pick = (pick + 1) % 5;
      switch (pick) {
        case 0: return truth;
        case 1: return "  " + truth + "\nThis is a well-known fact.";
        case 2: return truth + ", I believe";
        case 3: return d.qa_items[(k + 1) % d.qa_items.size()].at(lang).answer;
        default: return "I don't know";
      }
    }
    for (std::size_t t = 0; t < d.timeliness_items.size(); ++t) {
      const auto& item = d.timeliness_items[t];
      if (item.at(lang).question != question) continue;
      const auto& candidates = item.at(lang).candidates;
      if (t == 3 && li == 2) return "不知道";
      const std::size_t pick = t == 2 && li == 1 ? 0 : t;
      return candidates[pick % candidates.size()];
    }
  }
  throw std::runtime_error("unknown question: " + question);
}

mock::HttpServer::Handler e2e_chat_handler(const xlc::Dataset& d) {
  return [d](const nlohmann::json& request, int) {
    return mock::chat_reply(e2e_answer_for(d, mock::last_user_message(request)));
  };
}

xlc::EmbeddingProviderConfig mock_provider_config(int dims, std::uint64_t seed) {
  xlc::EmbeddingProviderConfig cfg;
  cfg.kind = xlc::ProviderKind::mock;
  cfg.expected_dims = dims;
  cfg.mock_seed = seed;
  cfg.batch_size = 16;
  return cfg;
}


CliResult run_xlc(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  CliResult r;
  r.code = xlc::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

CliResult run_e2e_pipeline(const std::filesystem::path& dir, const std::string& languages) {
  const auto dataset = data_path("makqa_e2e.jsonl").string();
  const auto d = xlc::load_dataset(dataset);
  mock::HttpServer server("/v1/chat/completions", e2e_chat_handler(d));
  std::vector<std::string> common{"--dataset", dataset, "--seed", "7"};
  if (!languages.empty()) {
    common.push_back("--languages");
    common.push_back(languages);
  }
  const std::vector<std::string> provider{"--provider", "mock", "--dims", "64",
                                          "--cache", (dir / "emb.bin").string()};
  const std::string answers = (dir / "answers.jsonl").string();

  const auto config = (dir / "xlc.json").string();
  auto with = [&](std::vector<std::string> head, const std::vector<std::string>& tail) {
    head.insert(head.begin(), {"--config", config});
    head.insert(head.end(), common.begin(), common.end());
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& item : d.qa_items) {
    nlohmann::json group = nlohmann::json::array();
    for (const auto& lang : d.languages) group.push_back(item.at(lang).answer);
    groups.push_back(group);
  }
  write_file(config, nlohmann::json{{"schema", "xlc-config/1"},
                                    {"provider", {{"synonyms", groups}}}}.dump(2));

  auto r = run_xlc(with({"collect"}, {"--answers", answers, "--endpoint", server.url(), "--model",
                                      "mock-model", "--shots", "2", "--backoff-ms", "1"}));
  if (r.code != 0) return r;
  auto p = with({"embed"}, provider);
  p.insert(p.end(), {"--answers", answers});
  r = run_xlc(p);
  if (r.code != 0) return r;
  p = with({"score"}, provider);
  p.insert(p.end(), {"--answers", answers, "--out-dir", dir.string()});
  return run_xlc(p);
}

std::filesystem::path golden_path(const std::string& name) { return data_path("golden/" + name); }

}  // namespace fixtures
