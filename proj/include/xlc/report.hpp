#pragma once

// ConsistencyReport assembly and serialization.
//
// report.json (schema "xlc-report/1") holds scores, degenerate-cell counts,
// all pair matrices, the per-domain xSC table and provenance. It contains no
// timestamps, so a run over the same inputs and a warm cache is
// byte-identical.
//
// Matrix CSV layout (also accepted for external matrices in `correlate`):
//   # optional comment lines
//   lang,En,De,Zh
//   En,,0.61,0.58
//   De,0.61,,0.55
//   Zh,0.58,0.55,
// Row i, column j holds the value for (row language, column language); an
// empty cell or "-" means unset.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "xlc/consistency.hpp"

namespace xlc {

inline constexpr const char* kReportSchema = "xlc-report/1";

struct Provenance {
  std::string dataset_sha256;
  std::string run_id;
  std::string model_id;
  std::string prompt_variant;
  std::uint64_t seed = 0;
  std::string embedding_provider;
};

struct ConsistencyReport {
  double xsc = 0.0;
  double xac = 0.0;
  double xtc = 0.0;
  double xc = 0.0;
  bool xc_degenerate = false;
  MetricResult xsc_result;
  MetricResult xac_result;
  MetricResult xtc_result;
  DomainBreakdown domains;
  Provenance provenance;
  ScoringConfig config;
  Languages languages;
  std::size_t qa_items = 0;
  std::size_t timeliness_items = 0;
};

ConsistencyReport score_all(const AnswerSet& answers, const Dataset& dataset,
                            Embedder& embedder, const ScoringConfig& cfg,
                            Provenance provenance);

nlohmann::ordered_json report_to_json(const ConsistencyReport& report);
// Pretty-printed JSON with a trailing newline.
std::string render_report(const ConsistencyReport& report);

nlohmann::ordered_json matrix_to_json(const PairMatrix& m);
PairMatrix matrix_from_json(const nlohmann::json& j);

void write_matrix_csv(std::ostream& out, const PairMatrix& m, const std::string& comment = {});
PairMatrix read_matrix_csv(std::istream& in);
PairMatrix read_matrix_csv_file(const std::filesystem::path& path);

// Reads report.json and returns the named matrix ("xsc", "xac", "xtc").
PairMatrix read_report_matrix(const std::filesystem::path& report_path, const std::string& metric);

// Fixed 6-digit rendering used in CSV outputs.
std::string format_value(double v);

// Human-readable summary of one or more report.json documents: a score row per
// report (e.g. one per prompt variant) and the per-domain xSC table.
std::string summarize_reports(const std::vector<nlohmann::json>& reports);

}  // namespace xlc
