#include "xlc/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace xlc {

using nlohmann::json;
using nlohmann::ordered_json;

ConsistencyReport score_all(const AnswerSet& answers, const Dataset& dataset, Embedder& embedder,
                            const ScoringConfig& cfg, Provenance provenance) {
  cfg.validate();
  check_coverage(answers, dataset, true);

  ConsistencyReport r;
  r.config = cfg;
  r.languages = dataset.languages;
  r.qa_items = dataset.qa_items.size();
  r.timeliness_items = dataset.timeliness_items.size();
  r.xsc_result = xsc(answers, dataset, embedder, cfg.include_timeliness_in_xsc);
  r.xac_result = xac(answers, dataset, cfg.chrf);
  r.xtc_result = xtc(answers, dataset, cfg.chrf, cfg.xtc_mode, cfg.tau);
  r.xsc = r.xsc_result.score;
  r.xac = r.xac_result.score;
  r.xtc = r.xtc_result.score;
  r.xc = xc(r.xsc, r.xac, r.xtc);
  r.xc_degenerate = xc_degenerate(r.xsc, r.xac, r.xtc);
  r.domains = domain_breakdown(answers, dataset, embedder);
  if (provenance.embedding_provider.empty()) {
    provenance.embedding_provider = embedder.config().describe();
  }
  r.provenance = std::move(provenance);
  return r;
}

ordered_json matrix_to_json(const PairMatrix& m) {
  ordered_json out;
  out["languages"] = ordered_json::array();
  for (const auto& l : m.languages()) out["languages"].push_back(l.str());
  ordered_json values = ordered_json::array();
  ordered_json degenerate = ordered_json::array();
  for (std::size_t i = 0; i < m.size(); ++i) {
    ordered_json row = ordered_json::array();
    ordered_json flags = ordered_json::array();
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (m.has(i, j)) {
        row.push_back(m.at(i, j));
      } else {
        row.push_back(nullptr);
      }
      flags.push_back(m.degenerate(i, j));
    }
    values.push_back(std::move(row));
    degenerate.push_back(std::move(flags));
  }
  out["values"] = std::move(values);
  out["degenerate"] = std::move(degenerate);
  return out;
}

PairMatrix matrix_from_json(const json& j) {
  Languages langs;
  for (const auto& l : j.at("languages")) langs.emplace_back(l.get<std::string>());
  PairMatrix m(langs);
  const auto& values = j.at("values");
  if (values.size() != langs.size()) throw Error("matrix: row count does not match languages");
  const json* flags = j.contains("degenerate") ? &j.at("degenerate") : nullptr;
  for (std::size_t i = 0; i < langs.size(); ++i) {
    if (values[i].size() != langs.size()) throw Error("matrix: ragged row");
    for (std::size_t k = 0; k < langs.size(); ++k) {
      if (values[i][k].is_null()) continue;
      const bool degenerate = flags != nullptr && flags->at(i).at(k).get<bool>();
      m.set(i, k, values[i][k].get<double>(), degenerate);
    }
  }
  return m;
}

namespace {

ordered_json metric_json(const MetricResult& r) {
  ordered_json out;
  out["score"] = r.score;
  out["items"] = r.items;
  out["degenerate_pairs"] = r.degenerate_cells;
  out["matrix"] = matrix_to_json(r.matrix);
  return out;
}

}  // namespace

ordered_json report_to_json(const ConsistencyReport& r) {
  ordered_json out;
  out["schema"] = kReportSchema;

  ordered_json prov;
  prov["dataset_sha256"] = r.provenance.dataset_sha256;
  prov["run_id"] = r.provenance.run_id;
  prov["model_id"] = r.provenance.model_id;
  prov["prompt_variant"] = r.provenance.prompt_variant;
  prov["seed"] = r.provenance.seed;
  prov["embedding_provider"] = r.provenance.embedding_provider;
  out["provenance"] = std::move(prov);

  ordered_json cfg;
  cfg["chrf"] = {{"char_ngram_max", r.config.chrf.char_ngram_max},
                 {"word_ngram_max", r.config.chrf.word_ngram_max},
                 {"beta", r.config.chrf.beta},
                 {"strip_whitespace_for_char_ngrams", r.config.chrf.strip_whitespace_for_char_ngrams},
                 {"case_fold", r.config.chrf.case_fold}};
  cfg["xtc_mode"] = to_string(r.config.xtc_mode);
  cfg["tau"] = r.config.tau;
  cfg["include_timeliness_in_xsc"] = r.config.include_timeliness_in_xsc;
  out["config"] = std::move(cfg);

  ordered_json counts;
  counts["languages"] = ordered_json::array();
  for (const auto& l : r.languages) counts["languages"].push_back(l.str());
  counts["qa_items"] = r.qa_items;
  counts["timeliness_items"] = r.timeliness_items;
  out["dataset"] = std::move(counts);

  ordered_json scores;
  scores["xsc"] = r.xsc;
  scores["xac"] = r.xac;
  scores["xtc"] = r.xtc;
  scores["xc"] = r.xc;
  scores["xc_degenerate"] = r.xc_degenerate;
  out["scores"] = std::move(scores);

  ordered_json metrics;
  metrics["xsc"] = metric_json(r.xsc_result);
  metrics["xac"] = metric_json(r.xac_result);
  metrics["xtc"] = metric_json(r.xtc_result);
  out["metrics"] = std::move(metrics);

  ordered_json domains = ordered_json::object();
  for (const auto& [name, d] : r.domains.domains) {
    domains[name] = {{"items", d.items}, {"xsc", d.xsc}};
  }
  out["domains"] = std::move(domains);
  out["warnings"] = r.domains.warnings;
  return out;
}

std::string render_report(const ConsistencyReport& report) {
  return report_to_json(report).dump(2) + "\n";
}

std::string format_value(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_matrix_csv(std::ostream& out, const PairMatrix& m, const std::string& comment) {
  if (!comment.empty()) out << "# " << comment << '\n';
  out << "lang";
  for (const auto& l : m.languages()) out << ',' << l.str();
  out << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) {
    out << m.languages()[i].str();
    for (std::size_t j = 0; j < m.size(); ++j) out << ',' << format_value(m.at(i, j));
    out << '\n';
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

}  // namespace

PairMatrix read_matrix_csv(std::istream& in) {
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv(line);
    if (header.empty()) {
      header = std::move(cells);
      continue;
    }
    if (cells.size() != header.size()) {
      throw Error("matrix CSV line " + std::to_string(line_no) + ": expected " +
                  std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    rows.push_back(std::move(cells));
  }
  if (header.size() < 2) throw Error("matrix CSV: missing header row");
  Languages cols;
  for (std::size_t k = 1; k < header.size(); ++k) cols.emplace_back(header[k]);
  if (rows.size() != cols.size()) {
    throw Error("matrix CSV: " + std::to_string(rows.size()) + " rows for " +
                std::to_string(cols.size()) + " columns");
  }
  Languages row_langs;
  for (const auto& r : rows) row_langs.emplace_back(r[0]);
  if (row_langs != cols) {
    std::string rl;
    std::string cl;
    for (const auto& l : row_langs) rl += " " + l.str();
    for (const auto& l : cols) cl += " " + l.str();
    throw Error("matrix CSV: row codes (" + rl.substr(1) + ") do not match column codes (" +
                cl.substr(1) + ")");
  }
  PairMatrix m(cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const auto& cell = rows[i][j + 1];
      if (cell.empty() || cell == "-") continue;
      try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        if (used != cell.size() || !std::isfinite(v)) throw std::invalid_argument(cell);
        m.set(i, j, v);
      } catch (const std::exception&) {
        throw Error("matrix CSV: bad number \"" + cell + "\" at " + row_langs[i].str() + "," +
                    cols[j].str());
      }
    }
  }
  return m;
}

PairMatrix read_matrix_csv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return read_matrix_csv(in);
}

PairMatrix read_report_matrix(const std::filesystem::path& report_path, const std::string& metric) {
  std::ifstream in(report_path);
  if (!in) throw IoError("cannot read " + report_path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(report_path.string() + ": invalid JSON: " + e.what());
  }
  if (doc.value("schema", std::string()) != kReportSchema) {
    throw Error(report_path.string() + ": not an " + std::string(kReportSchema) + " document");
  }
  const auto& metrics = doc.at("metrics");
  if (!metrics.contains(metric)) throw Error("report has no metric \"" + metric + "\"");
  return matrix_from_json(metrics.at(metric).at("matrix"));
}

std::string summarize_reports(const std::vector<json>& reports) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << std::left << std::setw(24) << "model" << std::setw(8) << "prompt" << std::right
      << std::setw(8) << "xSC" << std::setw(8) << "xAC" << std::setw(8) << "xTC" << std::setw(8)
      << "xC" << '\n';
  for (const auto& r : reports) {
    const auto& p = r.at("provenance");
    const auto& s = r.at("scores");
    out << std::left << std::setw(24) << p.value("model_id", std::string("-")) << std::setw(8)
        << p.value("prompt_variant", std::string("-")) << std::right << std::setw(8)
        << s.at("xsc").get<double>() << std::setw(8) << s.at("xac").get<double>() << std::setw(8)
        << s.at("xtc").get<double>() << std::setw(8) << s.at("xc").get<double>();
    if (s.value("xc_degenerate", false)) out << "  (xC degenerate)";
    out << '\n';
  }

  std::vector<std::string> domains;
  for (const auto& r : reports) {
    for (const auto& [name, _] : r.at("domains").items()) {
      if (std::find(domains.begin(), domains.end(), name) == domains.end()) {
        domains.push_back(name);
      }
    }
  }
  if (domains.empty()) return out.str();
  out << "\nper-domain xSC\n" << std::left << std::setw(24) << "model";
  for (const auto& d : domains) out << std::right << std::setw(12) << d;
  out << '\n';
  for (const auto& r : reports) {
    out << std::left << std::setw(24) << r.at("provenance").value("model_id", std::string("-"));
    for (const auto& d : domains) {
      const auto& dom = r.at("domains");
      if (dom.contains(d)) {
        out << std::right << std::setw(12) << dom.at(d).at("xsc").get<double>();
      } else {
        out << std::right << std::setw(12) << "-";
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace xlc
