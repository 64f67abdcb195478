#pragma once

// Model answers keyed by (language, item id), plus the JSONL store that
// collection writes and scoring reads:
//
//   {"schema":"xlc-answers/1","run_id",...,"seed",...}                   run header
//   {"lang","id","raw","answer","status":"ok"|"failed","attempts"}      one per cell
//
// Cells may appear more than once (resumed runs append); the last ok record
// wins, otherwise the last record. A torn final line is ignored.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "xlc/dataset.hpp"

namespace xlc {

inline constexpr const char* kAnswersSchema = "xlc-answers/1";

enum class PromptVariant { p1, p2, p3, custom };

std::string to_string(PromptVariant v);
PromptVariant parse_prompt_variant(const std::string& name);

using CellKey = std::pair<LanguageCode, std::string>;

struct AnswerSet {
  std::string run_id;
  std::string model_id;
  PromptVariant prompt_variant = PromptVariant::p1;
  std::uint64_t seed = 0;
  std::map<CellKey, std::string> answers;

  // Throws xlc::Error naming the cell if absent.
  const std::string& at(const LanguageCode& lang, const std::string& item_id) const;
  bool contains(const LanguageCode& lang, const std::string& item_id) const;
  void set(const LanguageCode& lang, const std::string& item_id, std::string text);

  friend bool operator==(const AnswerSet&, const AnswerSet&) = default;
};

enum class CellStatus { ok, failed };

struct AnswerRecord {
  LanguageCode lang;
  std::string id;
  std::string raw;
  std::string answer;
  CellStatus status = CellStatus::ok;
  int attempts = 0;
};

struct AnswersFile {
  nlohmann::ordered_json header;
  std::map<CellKey, AnswerRecord> cells;

  AnswerSet to_answer_set() const;
};

// Missing file -> nullopt. Malformed header -> xlc::Error.
std::optional<AnswersFile> read_answers_file(const std::filesystem::path& path);

// Requires every (declared language, evaluated item) cell; failed cells count
// as present with an empty answer.
AnswerSet load_answers(const std::filesystem::path& path);

// Append-only writer. Each record is one write of a complete line followed by
// a flush, so an interrupted run leaves at most one torn line.
class AnswersWriter {
 public:
  // Creates the file with `header` if absent; otherwise appends.
  AnswersWriter(const std::filesystem::path& path, const nlohmann::ordered_json& header);
  ~AnswersWriter();
  AnswersWriter(const AnswersWriter&) = delete;
  AnswersWriter& operator=(const AnswersWriter&) = delete;

  void append(const AnswerRecord& record);

 private:
  void write_line(const std::string& line);

  std::filesystem::path path_;
  int fd_ = -1;
  std::mutex mutex_;
};

nlohmann::ordered_json record_to_json(const AnswerRecord& r);

// Every (language, item) of the evaluated slice present in the set; lists
// what is missing otherwise.
void check_coverage(const AnswerSet& answers, const Dataset& d, bool include_timeliness = true);

}  // namespace xlc
