#include "xlc/answers.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xlc/text.hpp"

namespace xlc {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(PromptVariant v) {
  switch (v) {
    case PromptVariant::p1: return "p1";
    case PromptVariant::p2: return "p2";
    case PromptVariant::p3: return "p3";
    case PromptVariant::custom: return "custom";
  }
  return "unknown";
}

PromptVariant parse_prompt_variant(const std::string& name) {
  if (name == "p1") return PromptVariant::p1;
  if (name == "p2") return PromptVariant::p2;
  if (name == "p3") return PromptVariant::p3;
  if (name == "custom") return PromptVariant::custom;
  throw Error("unknown prompt variant \"" + name + "\" (expected p1, p2, p3 or custom)");
}

const std::string& AnswerSet::at(const LanguageCode& lang, const std::string& item_id) const {
  auto it = answers.find({lang, item_id});
  if (it == answers.end()) {
    throw Error("no answer for item " + item_id + " in " + lang.str());
  }
  return it->second;
}

bool AnswerSet::contains(const LanguageCode& lang, const std::string& item_id) const {
  return answers.contains({lang, item_id});
}

void AnswerSet::set(const LanguageCode& lang, const std::string& item_id, std::string text) {
  answers[{lang, item_id}] = nfc(text);
}

AnswerSet AnswersFile::to_answer_set() const {
  AnswerSet set;
  set.run_id = header.value("run_id", std::string());
  set.model_id = header.value("model_id", std::string());
  set.prompt_variant = parse_prompt_variant(header.value("prompt_variant", std::string("p1")));
  set.seed = header.value("seed", std::uint64_t{0});
  for (const auto& [key, record] : cells) {
    set.set(key.first, key.second, record.status == CellStatus::ok ? record.answer : "");
  }
  return set;
}

namespace {

AnswerRecord record_from_json(const json& obj) {
  AnswerRecord r;
  r.lang = LanguageCode(obj.at("lang").get<std::string>());
  r.id = obj.at("id").get<std::string>();
  r.raw = obj.value("raw", std::string());
  r.answer = obj.value("answer", std::string());
  const std::string status = obj.value("status", std::string("ok"));
  if (status == "ok") {
    r.status = CellStatus::ok;
  } else if (status == "failed") {
    r.status = CellStatus::failed;
  } else {
    throw Error("unknown answer status \"" + status + "\"");
  }
  r.attempts = obj.value("attempts", 0);
  return r;
}

}  // namespace

ordered_json record_to_json(const AnswerRecord& r) {
  ordered_json obj;
  obj["lang"] = r.lang.str();
  obj["id"] = r.id;
  obj["raw"] = r.raw;
  obj["answer"] = r.answer;
  obj["status"] = r.status == CellStatus::ok ? "ok" : "failed";
  obj["attempts"] = r.attempts;
  return obj;
}

std::optional<AnswersFile> read_answers_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) return std::nullopt;
    throw IoError("cannot read answers file " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();

  AnswersFile file;
  bool have_header = false;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    const std::size_t nl = content.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::string line = content.substr(pos, complete ? nl - pos : std::string::npos);
    pos = complete ? nl + 1 : content.size();
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error&) {
      if (!complete) break;  // torn tail from an interrupted write
      throw Error(path.string() + ":" + std::to_string(line_no) + ": invalid JSON");
    }
    if (!have_header) {
      if (obj.value("schema", std::string()) != kAnswersSchema) {
        throw Error(path.string() + ": expected header with schema \"" +
                    std::string(kAnswersSchema) + "\"");
      }
      file.header = ordered_json::parse(line);
      have_header = true;
      continue;
    }
    AnswerRecord r;
    try {
      r = record_from_json(obj);
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    CellKey key{r.lang, r.id};
    auto it = file.cells.find(key);
    if (it == file.cells.end() || r.status == CellStatus::ok ||
        it->second.status != CellStatus::ok) {
      file.cells[key] = std::move(r);
    }
  }
  if (!have_header) throw Error(path.string() + ": missing answers header");
  return file;
}

AnswerSet load_answers(const std::filesystem::path& path) {
  auto file = read_answers_file(path);
  if (!file) throw IoError("answers file not found: " + path.string());
  return file->to_answer_set();
}

void check_coverage(const AnswerSet& answers, const Dataset& d, bool include_timeliness) {
  std::vector<std::string> missing;
  for (const auto& lang : d.languages) {
    for (const auto& item : d.qa_items) {
      if (!answers.contains(lang, item.id)) missing.push_back(lang.str() + "/" + item.id);
    }
    if (!include_timeliness) continue;
    for (const auto& item : d.timeliness_items) {
      if (!answers.contains(lang, item.id)) missing.push_back(lang.str() + "/" + item.id);
    }
  }
  if (missing.empty()) return;
  std::string message = "answers missing for " + std::to_string(missing.size()) + " cell(s):";
  for (std::size_t i = 0; i < missing.size() && i < 10; ++i) message += " " + missing[i];
  if (missing.size() > 10) message += " ...";
  throw Error(message);
}

AnswersWriter::AnswersWriter(const std::filesystem::path& path, const ordered_json& header)
    : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw IoError("cannot open answers file " + path.string() + ": " + std::strerror(errno));
  }
  struct stat st {};
  ::fstat(fd_, &st);
  if (st.st_size == 0) {
    write_line(header.dump());
    return;
  }
  // Drop a torn trailing line left by an interrupted run.
  std::string content(static_cast<std::size_t>(st.st_size), '\0');
  if (::pread(fd_, content.data(), content.size(), 0) != st.st_size) {
    throw IoError("cannot read answers file " + path.string());
  }
  if (content.back() != '\n') {
    const auto nl = content.rfind('\n');
    const off_t keep = nl == std::string::npos ? 0 : static_cast<off_t>(nl + 1);
    if (::ftruncate(fd_, keep) != 0) throw IoError("cannot truncate " + path.string());
    if (keep == 0) write_line(header.dump());
  }
}

AnswersWriter::~AnswersWriter() {
  if (fd_ >= 0) ::close(fd_);
}

void AnswersWriter::write_line(const std::string& line) {
  const std::string data = line + "\n";
  const off_t end = ::lseek(fd_, 0, SEEK_END);
  const char* p = data.data();
  std::size_t n = data.size();
  off_t at = end;
  while (n > 0) {
    const ssize_t put = ::pwrite(fd_, p, n, at);
    if (put < 0 && errno == EINTR) continue;
    if (put <= 0) throw IoError("write to " + path_.string() + " failed: " + std::strerror(errno));
    p += put;
    n -= static_cast<std::size_t>(put);
    at += put;
  }
  ::fdatasync(fd_);
}

void AnswersWriter::append(const AnswerRecord& record) {
  const std::string line = record_to_json(record).dump();
  std::lock_guard lock(mutex_);
  write_line(line);
}

}  // namespace xlc
