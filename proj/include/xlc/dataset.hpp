#pragma once

// MAKQA-style multilingual aligned QA data.
//
// File layout (UTF-8 JSONL, one object per line):
//   {"schema":"makqa/1","languages":["En","De",...]}                      header
//   {"id","domain","entity","relation","q":{lang:text},"a":{lang:text}}    QA item
//   {"id","type":"timeliness","q":{lang:text},
//    "candidates":{lang:[newest,...,oldest]}}                               timeliness item
//   {"id","type":"exemplar","domain",...same fields as a QA item}          few-shot pool
//
// All text is NFC-normalized on load. Languages present in a record but not
// declared in the header are kept (and written back out) but never evaluated.

#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xlc/error.hpp"

namespace xlc {

inline constexpr const char* kDatasetSchema = "makqa/1";

class LanguageCode {
 public:
  LanguageCode() = default;
  explicit LanguageCode(std::string code);

  const std::string& str() const noexcept { return code_; }

  friend auto operator<=>(const LanguageCode&, const LanguageCode&) = default;

 private:
  std::string code_;
};

using Languages = std::vector<LanguageCode>;

struct QAEntry {
  std::string question;
  std::string answer;
  friend bool operator==(const QAEntry&, const QAEntry&) = default;
};

struct QAItem {
  std::string id;
  std::string domain;
  std::string entity;
  std::string relation;
  std::map<LanguageCode, QAEntry> entries;

  const QAEntry& at(const LanguageCode& lang) const;
  friend bool operator==(const QAItem&, const QAItem&) = default;
};

struct TimelinessEntry {
  std::string question;
  std::vector<std::string> candidates;  // index 0 is the most recent answer
  friend bool operator==(const TimelinessEntry&, const TimelinessEntry&) = default;
};

struct TimelinessItem {
  std::string id;
  std::map<LanguageCode, TimelinessEntry> entries;

  const TimelinessEntry& at(const LanguageCode& lang) const;
  // R: number of ranked candidates (0 if the item has no entries).
  std::size_t ranks() const;
  friend bool operator==(const TimelinessItem&, const TimelinessItem&) = default;
};

struct Dataset {
  Languages languages;
  std::vector<QAItem> qa_items;
  std::vector<TimelinessItem> timeliness_items;
  std::map<std::string, std::vector<QAItem>> few_shot_pool;  // keyed by domain

  std::map<std::string, std::size_t> domain_counts() const;
  const QAItem* find_qa(const std::string& id) const;
  const TimelinessItem* find_timeliness(const std::string& id) const;

  // Copy evaluated over a subset of the declared languages (order as given).
  Dataset with_languages(const Languages& subset) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct Violation {
  std::string item_id;  // empty for dataset-level problems
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
};

// Malformed input. line() is 1-based, 0 when not tied to a line.
class DatasetError : public Error {
 public:
  DatasetError(const std::string& message, std::size_t line = 0,
               std::string item_id = {});
  std::size_t line() const noexcept { return line_; }
  const std::string& item_id() const noexcept { return item_id_; }

 private:
  std::size_t line_;
  std::string item_id_;
};

// Parses without checking alignment invariants; throws DatasetError on
// malformed records only.
Dataset parse_dataset(std::istream& in);
Dataset parse_dataset_file(const std::filesystem::path& path);

// Parses and validates. Throws DatasetError naming the first violation, or
// IoError if the file cannot be read.
Dataset load_dataset(const std::filesystem::path& path);

ValidationReport validate_alignment(const Dataset& d);

void write_dataset(std::ostream& out, const Dataset& d);

std::string file_sha256(const std::filesystem::path& path);

}  // namespace xlc
