#include "xlc/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "xlc/text.hpp"

namespace xlc {

using nlohmann::json;
using nlohmann::ordered_json;

LanguageCode::LanguageCode(std::string code) : code_(std::move(code)) {
  if (code_.empty()) throw Error("language code must be nonempty");
}

const QAEntry& QAItem::at(const LanguageCode& lang) const {
  auto it = entries.find(lang);
  if (it == entries.end()) {
    throw Error("item " + id + " has no entry for language " + lang.str());
  }
  return it->second;
}

const TimelinessEntry& TimelinessItem::at(const LanguageCode& lang) const {
  auto it = entries.find(lang);
  if (it == entries.end()) {
    throw Error("item " + id + " has no entry for language " + lang.str());
  }
  return it->second;
}

std::size_t TimelinessItem::ranks() const {
  return entries.empty() ? 0 : entries.begin()->second.candidates.size();
}

std::map<std::string, std::size_t> Dataset::domain_counts() const {
  std::map<std::string, std::size_t> counts;
  for (const auto& item : qa_items) ++counts[item.domain];
  return counts;
}

const QAItem* Dataset::find_qa(const std::string& id) const {
  auto it = std::find_if(qa_items.begin(), qa_items.end(),
                         [&](const QAItem& q) { return q.id == id; });
  return it == qa_items.end() ? nullptr : &*it;
}

const TimelinessItem* Dataset::find_timeliness(const std::string& id) const {
  auto it = std::find_if(timeliness_items.begin(), timeliness_items.end(),
                         [&](const TimelinessItem& t) { return t.id == id; });
  return it == timeliness_items.end() ? nullptr : &*it;
}

Dataset Dataset::with_languages(const Languages& subset) const {
  for (const auto& lang : subset) {
    if (std::find(languages.begin(), languages.end(), lang) == languages.end()) {
      throw Error("language " + lang.str() + " is not declared by the dataset");
    }
  }
  Dataset out = *this;
  out.languages = subset;
  return out;
}

DatasetError::DatasetError(const std::string& message, std::size_t line,
                           std::string item_id)
    : Error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
      line_(line),
      item_id_(std::move(item_id)) {}

namespace {

std::string require_string(const json& obj, const char* key, std::size_t line,
                           const std::string& id) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw DatasetError(std::string("missing or non-string field \"") + key + "\"",
                       line, id);
  }
  return nfc(it->get<std::string>());
}

std::map<LanguageCode, std::string> read_text_map(const json& obj, const char* key,
                                                  std::size_t line,
                                                  const std::string& id) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_object()) {
    throw DatasetError(std::string("missing or non-object field \"") + key + "\"",
                       line, id);
  }
  std::map<LanguageCode, std::string> out;
  for (const auto& [lang, text] : it->items()) {
    if (lang.empty()) throw DatasetError("empty language code", line, id);
    if (!text.is_string()) {
      throw DatasetError(std::string("non-string text in \"") + key + "\" for " + lang,
                         line, id);
    }
    out.emplace(LanguageCode(lang), nfc(text.get<std::string>()));
  }
  return out;
}

QAItem parse_qa(const json& obj, std::size_t line) {
  QAItem item;
  item.id = require_string(obj, "id", line, {});
  item.domain = require_string(obj, "domain", line, item.id);
  item.entity = obj.contains("entity") ? require_string(obj, "entity", line, item.id) : "";
  item.relation =
      obj.contains("relation") ? require_string(obj, "relation", line, item.id) : "";
  auto questions = read_text_map(obj, "q", line, item.id);
  auto answers = read_text_map(obj, "a", line, item.id);
  for (auto& [lang, q] : questions) item.entries[lang].question = std::move(q);
  for (auto& [lang, a] : answers) item.entries[lang].answer = std::move(a);
  return item;
}

TimelinessItem parse_timeliness(const json& obj, std::size_t line) {
  TimelinessItem item;
  item.id = require_string(obj, "id", line, {});
  for (auto& [lang, q] : read_text_map(obj, "q", line, item.id)) {
    item.entries[lang].question = std::move(q);
  }
  auto it = obj.find("candidates");
  if (it == obj.end() || !it->is_object()) {
    throw DatasetError("missing or non-object field \"candidates\"", line, item.id);
  }
  for (const auto& [lang, list] : it->items()) {
    if (lang.empty()) throw DatasetError("empty language code", line, item.id);
    if (!list.is_array()) {
      throw DatasetError("candidates for " + lang + " must be an array", line, item.id);
    }
    auto& candidates = item.entries[LanguageCode(lang)].candidates;
    for (const auto& c : list) {
      if (!c.is_string()) {
        throw DatasetError("non-string candidate for " + lang, line, item.id);
      }
      candidates.push_back(nfc(c.get<std::string>()));
    }
  }
  return item;
}

void check_qa(const QAItem& item, const Languages& langs,
              std::vector<Violation>& out) {
  if (item.domain.empty()) out.push_back({item.id, "empty domain"});
  for (const auto& lang : langs) {
    auto it = item.entries.find(lang);
    if (it == item.entries.end()) {
      out.push_back({item.id, "missing language " + lang.str()});
      continue;
    }
    if (it->second.question.empty()) {
      out.push_back({item.id, "empty question in " + lang.str()});
    }
    if (it->second.answer.empty()) {
      out.push_back({item.id, "empty answer in " + lang.str()});
    }
  }
}

void check_timeliness(const TimelinessItem& item, const Languages& langs,
                      std::vector<Violation>& out) {
  std::set<std::size_t> lengths;
  for (const auto& lang : langs) {
    auto it = item.entries.find(lang);
    if (it == item.entries.end()) {
      out.push_back({item.id, "missing language " + lang.str()});
      continue;
    }
    const auto& entry = it->second;
    if (entry.question.empty()) {
      out.push_back({item.id, "empty question in " + lang.str()});
    }
    if (entry.candidates.empty()) {
      out.push_back({item.id, "no candidates in " + lang.str()});
    }
    for (std::size_t r = 0; r < entry.candidates.size(); ++r) {
      if (entry.candidates[r].empty()) {
        out.push_back({item.id, "empty candidate " + std::to_string(r + 1) + " in " +
                                    lang.str()});
      }
    }
    lengths.insert(entry.candidates.size());
  }
  if (lengths.size() > 1) {
    std::string sizes;
    for (auto n : lengths) sizes += (sizes.empty() ? "" : ", ") + std::to_string(n);
    out.push_back({item.id, "candidate lists differ in length across languages (" +
                                sizes + ")"});
  }
}

}  // namespace

Dataset parse_dataset(std::istream& in) {
  Dataset d;
  bool have_header = false;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (raw.find_first_not_of(" \t") == std::string::npos) continue;

    json obj;
    try {
      obj = json::parse(raw);
    } catch (const json::parse_error& e) {
      throw DatasetError(std::string("invalid JSON: ") + e.what(), line);
    }
    if (!obj.is_object()) throw DatasetError("record is not a JSON object", line);

    if (!have_header) {
      auto schema = obj.find("schema");
      if (schema == obj.end() || *schema != kDatasetSchema) {
        throw DatasetError(std::string("expected header with schema \"") +
                               kDatasetSchema + "\"",
                           line);
      }
      auto langs = obj.find("languages");
      if (langs == obj.end() || !langs->is_array()) {
        throw DatasetError("header lacks a \"languages\" array", line);
      }
      for (const auto& code : *langs) {
        if (!code.is_string() || code.get<std::string>().empty()) {
          throw DatasetError("language codes must be nonempty strings", line);
        }
        d.languages.emplace_back(code.get<std::string>());
      }
      have_header = true;
      continue;
    }

    const std::string type = obj.value("type", std::string("qa"));
    if (type == "qa") {
      d.qa_items.push_back(parse_qa(obj, line));
    } else if (type == "timeliness") {
      d.timeliness_items.push_back(parse_timeliness(obj, line));
    } else if (type == "exemplar") {
      QAItem item = parse_qa(obj, line);
      d.few_shot_pool[item.domain].push_back(std::move(item));
    } else {
      throw DatasetError("unknown record type \"" + type + "\"", line);
    }
  }
  if (!have_header) throw DatasetError("missing header line", line == 0 ? 1 : line);
  return d;
}

Dataset parse_dataset_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset " + path.string());
  return parse_dataset(in);
}

Dataset load_dataset(const std::filesystem::path& path) {
  Dataset d = parse_dataset_file(path);
  auto report = validate_alignment(d);
  if (!report.ok()) {
    const auto& v = report.violations.front();
    std::string message = v.item_id.empty() ? v.message : "item " + v.item_id + ": " + v.message;
    if (report.violations.size() > 1) {
      message += " (+" + std::to_string(report.violations.size() - 1) + " more)";
    }
    throw DatasetError(message, 0, v.item_id);
  }
  return d;
}

ValidationReport validate_alignment(const Dataset& d) {
  ValidationReport report;
  auto& out = report.violations;
  if (d.languages.size() < 2) {
    out.push_back({{}, "at least 2 languages required, got " +
                           std::to_string(d.languages.size())});
  }
  std::set<LanguageCode> seen_langs;
  for (const auto& lang : d.languages) {
    if (!seen_langs.insert(lang).second) {
      out.push_back({{}, "language " + lang.str() + " declared twice"});
    }
  }

  std::set<std::string> ids;
  auto check_id = [&](const std::string& id) {
    if (id.empty()) {
      out.push_back({id, "empty id"});
    } else if (!ids.insert(id).second) {
      out.push_back({id, "duplicate id"});
    }
  };
  for (const auto& item : d.qa_items) {
    check_id(item.id);
    check_qa(item, d.languages, out);
  }
  for (const auto& item : d.timeliness_items) {
    check_id(item.id);
    check_timeliness(item, d.languages, out);
  }
  for (const auto& [domain, pool] : d.few_shot_pool) {
    for (const auto& item : pool) {
      check_id(item.id);
      check_qa(item, d.languages, out);
    }
  }
  return report;
}

namespace {

ordered_json qa_json(const QAItem& item, const char* type) {
  ordered_json obj;
  obj["id"] = item.id;
  if (type != nullptr) obj["type"] = type;
  obj["domain"] = item.domain;
  obj["entity"] = item.entity;
  obj["relation"] = item.relation;
  ordered_json q = ordered_json::object();
  ordered_json a = ordered_json::object();
  for (const auto& [lang, entry] : item.entries) {
    q[lang.str()] = entry.question;
    a[lang.str()] = entry.answer;
  }
  obj["q"] = std::move(q);
  obj["a"] = std::move(a);
  return obj;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& d) {
  ordered_json header;
  header["schema"] = kDatasetSchema;
  header["languages"] = ordered_json::array();
  for (const auto& lang : d.languages) header["languages"].push_back(lang.str());
  out << header.dump() << '\n';

  for (const auto& item : d.qa_items) out << qa_json(item, nullptr).dump() << '\n';
  for (const auto& item : d.timeliness_items) {
    ordered_json obj;
    obj["id"] = item.id;
    obj["type"] = "timeliness";
    ordered_json q = ordered_json::object();
    ordered_json c = ordered_json::object();
    for (const auto& [lang, entry] : item.entries) {
      q[lang.str()] = entry.question;
      c[lang.str()] = entry.candidates;
    }
    obj["q"] = std::move(q);
    obj["candidates"] = std::move(c);
    out << obj.dump() << '\n';
  }
  for (const auto& [domain, pool] : d.few_shot_pool) {
    for (const auto& item : pool) out << qa_json(item, "exemplar").dump() << '\n';
  }
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return sha256_hex(buffer.str());
}

}  // namespace xlc
