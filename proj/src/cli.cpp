#include "xlc/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xlc/collection.hpp"
#include "xlc/consistency.hpp"
#include "xlc/dataset.hpp"
#include "xlc/embedding.hpp"
#include "xlc/report.hpp"

namespace xlc {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public IoError {
 public:
  using IoError::IoError;
};

// Values read from --config, then overridden by any flag given explicitly.
struct Settings {
  std::optional<std::string> dataset;
  std::optional<std::string> answers;
  std::optional<std::string> cache;
  std::optional<std::string> out_dir;
  std::optional<std::string> languages;  // comma-separated
  std::optional<std::uint64_t> seed;

  // embedding provider
  std::optional<std::string> provider;
  std::optional<std::string> embed_endpoint;
  std::optional<int> dims;
  std::optional<int> batch_size;
  std::optional<int> embed_max_attempts;
  std::vector<std::vector<std::string>> synonyms;

  // collection
  std::optional<std::string> endpoint;
  std::optional<std::string> model;
  std::optional<int> shots;
  std::optional<std::string> variant;
  std::optional<int> concurrency;
  std::optional<std::string> templates;
  std::optional<std::string> paraphrases;
  std::optional<std::string> custom_template;
  std::optional<int> timeout_ms;
  std::optional<int> max_attempts;
  std::optional<int> backoff_ms;
  std::optional<double> rate;
  std::optional<double> temperature;
  std::optional<int> max_tokens;
  std::optional<std::string> run_id;

  // scoring
  std::optional<int> char_order;
  std::optional<int> word_order;
  std::optional<double> beta;
  std::optional<bool> case_fold;
  std::optional<std::string> xtc_mode;
  std::optional<double> tau;
  std::optional<bool> include_timeliness;
};

template <typename T>
void take(std::optional<T>& dst, const json& obj, const char* key) {
  if (!dst && obj.contains(key) && !obj.at(key).is_null()) dst = obj.at(key).get<T>();
}

void take_path(std::optional<std::string>& dst, const json& obj, const char* key,
               const fs::path& base) {
  if (dst || !obj.contains(key)) return;
  fs::path p = obj.at(key).get<std::string>();
  dst = (p.is_absolute() ? p : base / p).lexically_normal().string();
}

// Fills unset fields from the config file; flags already set win.
void merge_config(Settings& s, const fs::path& config_path) {
  std::ifstream in(config_path);
  if (!in) throw UsageError("cannot read config " + config_path.string());
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(config_path.string() + ": invalid JSON: " + e.what());
  }
  if (cfg.value("schema", std::string()) != kConfigSchema) {
    throw UsageError(config_path.string() + ": expected schema \"" + std::string(kConfigSchema) +
                     "\"");
  }
  const fs::path base = config_path.parent_path();
  try {
    take_path(s.dataset, cfg, "dataset", base);
    take_path(s.answers, cfg, "answers", base);
    take_path(s.cache, cfg, "cache", base);
    take_path(s.out_dir, cfg, "out_dir", base);
    if (!s.languages && cfg.contains("languages")) {
      std::string joined;
      for (const auto& l : cfg.at("languages")) {
        joined += (joined.empty() ? "" : ",") + l.get<std::string>();
      }
      s.languages = joined;
    }
    take(s.seed, cfg, "seed");
    take(s.xtc_mode, cfg, "xtc_mode");
    take(s.tau, cfg, "tau");
    take(s.include_timeliness, cfg, "include_timeliness_in_xsc");
    if (cfg.contains("provider")) {
      const auto& p = cfg.at("provider");
      take(s.provider, p, "kind");
      take(s.embed_endpoint, p, "endpoint");
      take(s.dims, p, "dims");
      take(s.batch_size, p, "batch_size");
      take(s.embed_max_attempts, p, "max_attempts");
      if (s.synonyms.empty() && p.contains("synonyms")) {
        s.synonyms = p.at("synonyms").get<std::vector<std::vector<std::string>>>();
      }
    }
    if (cfg.contains("collection")) {
      const auto& c = cfg.at("collection");
      take(s.endpoint, c, "endpoint");
      take(s.model, c, "model");
      take(s.shots, c, "shots");
      take(s.variant, c, "variant");
      take(s.concurrency, c, "concurrency");
      take_path(s.templates, c, "templates", base);
      take_path(s.paraphrases, c, "paraphrases", base);
      take(s.custom_template, c, "custom_template");
      take(s.timeout_ms, c, "timeout_ms");
      take(s.max_attempts, c, "max_attempts");
      take(s.backoff_ms, c, "backoff_ms");
      take(s.rate, c, "rate");
      take(s.temperature, c, "temperature");
      take(s.max_tokens, c, "max_tokens");
      take(s.run_id, c, "run_id");
    }
    if (cfg.contains("chrf")) {
      const auto& c = cfg.at("chrf");
      take(s.char_order, c, "char_ngram_max");
      take(s.word_order, c, "word_ngram_max");
      take(s.beta, c, "beta");
      take(s.case_fold, c, "case_fold");
    }
  } catch (const json::exception& e) {
    throw UsageError(config_path.string() + ": " + e.what());
  }
}

std::string require(const std::optional<std::string>& v, const char* flag) {
  if (!v || v->empty()) throw UsageError(std::string("missing required ") + flag);
  return *v;
}

fs::path existing_path(const std::optional<std::string>& v, const char* flag) {
  fs::path p = require(v, flag);
  if (!fs::exists(p)) throw UsageError(std::string(flag) + ": no such file " + p.string());
  return p;
}

Languages parse_languages(const std::optional<std::string>& list) {
  Languages out;
  if (!list) return out;
  std::stringstream in(*list);
  std::string code;
  while (std::getline(in, code, ',')) {
    if (!code.empty()) out.emplace_back(code);
  }
  return out;
}

Dataset load_slice(const Settings& s) {
  Dataset d = load_dataset(existing_path(s.dataset, "--dataset"));
  const auto langs = parse_languages(s.languages);
  return langs.empty() ? d : d.with_languages(langs);
}

EmbeddingProviderConfig provider_config(const Settings& s) {
  EmbeddingProviderConfig cfg;
  cfg.kind = parse_provider_kind(s.provider.value_or("mock"));
  cfg.endpoint = s.embed_endpoint.value_or("");
  cfg.expected_dims = s.dims.value_or(cfg.expected_dims);
  cfg.batch_size = s.batch_size.value_or(cfg.batch_size);
  cfg.retry.max_attempts = s.embed_max_attempts.value_or(cfg.retry.max_attempts);
  cfg.mock_seed = s.seed.value_or(0);
  cfg.synonyms = s.synonyms;
  cfg.validate();
  return cfg;
}

ChrfConfig chrf_config(const Settings& s) {
  ChrfConfig c;
  c.char_ngram_max = s.char_order.value_or(c.char_ngram_max);
  c.word_ngram_max = s.word_order.value_or(c.word_ngram_max);
  c.beta = s.beta.value_or(c.beta);
  c.case_fold = s.case_fold.value_or(c.case_fold);
  c.validate();
  return c;
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write to " + path.string() + " failed");
}

std::string seed_comment(const std::string& what, std::uint64_t seed) {
  return "xlc " + what + " seed=" + std::to_string(seed);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_validate(const std::string& path, std::ostream& out) {
  if (!fs::exists(path)) throw UsageError("no such file " + path);
  Dataset d;
  try {
    d = parse_dataset_file(path);
  } catch (const DatasetError& e) {
    out << "malformed: " << e.what() << '\n';
    return kExitFailure;
  }
  const auto report = validate_alignment(d);
  out << "languages: " << d.languages.size() << '\n';
  out << "qa items: " << d.qa_items.size() << '\n';
  for (const auto& [domain, n] : d.domain_counts()) out << "  " << domain << ": " << n << '\n';
  out << "timeliness items: " << d.timeliness_items.size() << '\n';
  std::size_t pool = 0;
  for (const auto& [domain, items] : d.few_shot_pool) pool += items.size();
  out << "exemplars: " << pool << '\n';
  out << "violations: " << report.violations.size() << '\n';
  for (const auto& v : report.violations) {
    out << "  " << (v.item_id.empty() ? "<dataset>" : v.item_id) << ": " << v.message << '\n';
  }
  return report.ok() ? kExitOk : kExitFailure;
}

int cmd_collect(const Settings& s, std::ostream& out) {
  const fs::path dataset_path = existing_path(s.dataset, "--dataset");
  const Dataset d = load_dataset(dataset_path);
  CollectionConfig cfg;
  cfg.endpoint = require(s.endpoint, "--endpoint");
  cfg.model_id = require(s.model, "--model");
  cfg.shots = s.shots.value_or(cfg.shots);
  cfg.exemplar_seed = s.seed.value_or(0);
  cfg.concurrency = s.concurrency.value_or(cfg.concurrency);
  cfg.variant = parse_prompt_variant(s.variant.value_or("p1"));
  if (s.timeout_ms) cfg.timeout = std::chrono::milliseconds(*s.timeout_ms);
  if (s.max_attempts) cfg.retry.max_attempts = *s.max_attempts;
  if (s.backoff_ms) cfg.retry.initial_backoff = std::chrono::milliseconds(*s.backoff_ms);
  cfg.requests_per_second = s.rate.value_or(0.0);
  if (s.temperature) cfg.decoding["temperature"] = *s.temperature;
  if (s.max_tokens) cfg.decoding["max_tokens"] = *s.max_tokens;
  if (s.templates) cfg.sources.templates = read_text_table(existing_path(s.templates, "--templates"));
  if (s.paraphrases) {
    cfg.sources.paraphrases = read_text_table(existing_path(s.paraphrases, "--paraphrases"));
  }
  cfg.sources.custom_template = s.custom_template.value_or("");
  cfg.languages = parse_languages(s.languages);
  cfg.run_id = s.run_id.value_or("");
  cfg.dataset_sha256 = file_sha256(dataset_path);
  const fs::path answers_path = require(s.answers, "--answers");

  const auto result = collect_answers(d, cfg, answers_path);
  std::size_t ok = 0;
  std::size_t failed = 0;
  for (const auto& r : result.manifest.requests) {
    (r.status == CellStatus::ok ? ok : failed)++;
  }
  out << "run " << result.manifest.run_id << ": " << ok << " ok, " << failed << " failed\n";
  out << "answers: " << answers_path.string() << '\n';
  return failed == 0 ? kExitOk : kExitFailure;
}

int cmd_embed(const Settings& s, std::ostream& out) {
  const Dataset d = load_slice(s);
  const auto provider = provider_config(s);
  EmbeddingCache cache(require(s.cache, "--cache"));
  Embedder embedder(provider, cache, make_provider(provider));

  std::vector<std::string> texts;
  if (s.answers) {
    const AnswerSet answers = load_answers(existing_path(s.answers, "--answers"));
    for (const auto& lang : d.languages) {
      for (const auto& item : d.qa_items) texts.push_back(answers.at(lang, item.id));
      for (const auto& item : d.timeliness_items) {
        if (answers.contains(lang, item.id)) texts.push_back(answers.at(lang, item.id));
      }
    }
  }
  // Ground truth too, so the oracle score is available offline.
  for (const auto& lang : d.languages) {
    for (const auto& item : d.qa_items) texts.push_back(item.at(lang).answer);
  }
  embedder.embed_batch(texts);
  const auto stats = embedder.stats();
  out << "embedded " << texts.size() << " texts: " << stats.cache_hits << " cache hits, "
      << stats.texts_fetched << " fetched in " << stats.provider_calls << " calls\n";
  out << "cache: " << cache.path().string() << " (" << cache.size() << " vectors)\n";
  return kExitOk;
}

int cmd_score(const Settings& s, std::ostream& out) {
  const fs::path dataset_path = existing_path(s.dataset, "--dataset");
  const Dataset d = load_slice(s);
  const AnswerSet answers = load_answers(existing_path(s.answers, "--answers"));
  const auto provider = provider_config(s);
  EmbeddingCache cache(require(s.cache, "--cache"));
  Embedder embedder(provider, cache, make_provider(provider));

  ScoringConfig cfg;
  cfg.chrf = chrf_config(s);
  cfg.xtc_mode = parse_timeliness_mode(s.xtc_mode.value_or("prose"));
  cfg.tau = s.tau.value_or(0.0);
  cfg.include_timeliness_in_xsc = s.include_timeliness.value_or(false);

  Provenance prov;
  prov.dataset_sha256 = file_sha256(dataset_path);
  prov.run_id = answers.run_id;
  prov.model_id = answers.model_id;
  prov.prompt_variant = to_string(answers.prompt_variant);
  prov.seed = s.seed.value_or(answers.seed);
  prov.embedding_provider = provider.describe();

  const auto report = score_all(answers, d, embedder, cfg, prov);
  const fs::path dir = require(s.out_dir, "--out-dir");
  write_file(dir / "report.json", render_report(report));
  for (const auto& [name, m] : {std::pair{"xsc", &report.xsc_result.matrix},
                                std::pair{"xac", &report.xac_result.matrix},
                                std::pair{"xtc", &report.xtc_result.matrix}}) {
    std::ostringstream csv;
    write_matrix_csv(csv, *m, seed_comment(std::string(name) + " matrix", prov.seed));
    write_file(dir / (std::string(name) + ".csv"), csv.str());
  }
  std::ostringstream domains;
  domains << "# " << seed_comment("per-domain xsc", prov.seed) << "\ndomain,items,xsc\n";
  for (const auto& [name, dom] : report.domains.domains) {
    domains << name << ',' << dom.items << ',' << format_value(dom.xsc) << '\n';
  }
  write_file(dir / "domains.csv", domains.str());

  out << "xSC " << format_value(report.xsc) << "  xAC " << format_value(report.xac) << "  xTC "
      << format_value(report.xtc) << "  xC " << format_value(report.xc)
      << (report.xc_degenerate ? " (degenerate)" : "") << '\n';
  for (const auto& w : report.domains.warnings) out << "warning: " << w << '\n';
  out << "report: " << (dir / "report.json").string() << '\n';
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& paths, const std::optional<std::string>& out_path,
               std::ostream& out) {
  std::vector<json> docs;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw UsageError("cannot read " + p);
    try {
      docs.push_back(json::parse(in));
    } catch (const json::parse_error& e) {
      throw Error(p + ": invalid JSON: " + e.what());
    }
    if (docs.back().value("schema", std::string()) != kReportSchema) {
      throw Error(p + ": not an " + std::string(kReportSchema) + " document");
    }
  }
  const std::string text = summarize_reports(docs);
  if (out_path) {
    write_file(*out_path, text);
  } else {
    out << text;
  }
  return kExitOk;
}

int cmd_correlate(const std::string& report_path, const std::string& external_path,
                  const std::string& metric, const std::optional<std::string>& csv_out,
                  std::ostream& out) {
  if (!fs::exists(report_path)) throw UsageError("no such file " + report_path);
  if (!fs::exists(external_path)) throw UsageError("no such file " + external_path);
  const PairMatrix own = read_report_matrix(report_path, metric);
  const PairMatrix external = read_matrix_csv_file(external_path);
  const auto c = correlate_matrices(own, external);

  out << "pairs: " << c.n_pairs << '\n';
  out << "pearson: " << format_value(c.pearson.value) << (c.pearson.degenerate ? " (degenerate)" : "")
      << '\n';
  out << "spearman: " << format_value(c.spearman.value)
      << (c.spearman.degenerate ? " (degenerate)" : "") << '\n';
  std::ostringstream csv;
  csv << "lang," << metric << "_row_mean,external_row_mean\n";
  for (const auto& r : c.row_means) {
    csv << r.lang.str() << ',' << format_value(r.consistency) << ',' << format_value(r.external)
        << '\n';
  }
  if (csv_out) {
    write_file(*csv_out, csv.str());
  } else {
    out << csv.str();
  }
  return kExitOk;
}

void add_dataset_flags(CLI::App* cmd, Settings& s) {
  cmd->add_option("--dataset", s.dataset, "MAKQA JSONL dataset");
  cmd->add_option("--languages", s.languages, "Comma-separated language subset, e.g. En,De,Zh");
  cmd->add_option("--seed", s.seed, "Seed for exemplar sampling and the mock embedder");
}

void add_provider_flags(CLI::App* cmd, Settings& s) {
  cmd->add_option("--cache", s.cache, "Embedding cache file");
  cmd->add_option("--provider", s.provider, "Embedding provider: http, mock or cache-only");
  cmd->add_option("--embed-endpoint", s.embed_endpoint,
                  "Embedding endpoint URL (POST {\"texts\":[...]}); token from XLC_EMBED_TOKEN");
  cmd->add_option("--dims", s.dims, "Expected embedding dimension");
  cmd->add_option("--batch-size", s.batch_size, "Texts per embedding request");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-lingual consistency toolkit: xSC, xAC, xTC and xC for multilingual QA runs",
               "xlc"};
  app.require_subcommand(1);
  Settings s;
  std::optional<std::string> config;
  app.add_option("--config", config, "Run config file (JSON, schema xlc-config/1); flags win")
      ->check(CLI::ExistingFile);

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a dataset file's format and alignment");
  validate->add_option("dataset", validate_path, "MAKQA JSONL dataset")->required();

  auto* collect = app.add_subcommand("collect", "Collect model answers from a chat-completions endpoint");
  add_dataset_flags(collect, s);
  collect->add_option("--answers,--out", s.answers, "Answers JSONL (created or resumed)");
  collect->add_option("--endpoint", s.endpoint,
                      "Chat-completions URL; bearer token from XLC_LLM_API_KEY");
  collect->add_option("--model", s.model, "Model id sent with each request");
  collect->add_option("--shots", s.shots, "Few-shot exemplars per prompt (default 5)");
  collect->add_option("--variant", s.variant, "Prompt variant: p1, p2, p3 or custom");
  collect->add_option("--concurrency", s.concurrency, "Maximum requests in flight (default 4)");
  collect->add_option("--templates", s.templates, "p2 templates: {relation: {lang: text}}");
  collect->add_option("--paraphrases", s.paraphrases, "p3 paraphrases: {item id: {lang: text}}");
  collect->add_option("--custom-template", s.custom_template,
                      "custom variant template using {question}, {entity}, {relation}");
  collect->add_option("--timeout-ms", s.timeout_ms, "Per-request timeout");
  collect->add_option("--max-attempts", s.max_attempts, "Attempts per cell before marking it failed");
  collect->add_option("--backoff-ms", s.backoff_ms, "Initial retry backoff");
  collect->add_option("--rate", s.rate, "Requests per second (0 = unlimited)");
  collect->add_option("--temperature", s.temperature, "Sampling temperature (default 0)");
  collect->add_option("--max-tokens", s.max_tokens, "Completion token limit (default 64)");
  collect->add_option("--run-id", s.run_id, "Run id (default derived from model, variant, seed)");

  auto* embed = app.add_subcommand("embed", "Fill the embedding cache for answers and ground truth");
  add_dataset_flags(embed, s);
  add_provider_flags(embed, s);
  embed->add_option("--answers", s.answers, "Answers JSONL");

  auto* score = app.add_subcommand("score", "Compute xSC, xAC, xTC, xC and write the report");
  add_dataset_flags(score, s);
  add_provider_flags(score, s);
  score->add_option("--answers", s.answers, "Answers JSONL");
  score->add_option("--out-dir", s.out_dir, "Directory for report.json and matrix CSVs");
  score->add_option("--xtc-mode", s.xtc_mode, "Timeliness score: prose (default) or formula");
  score->add_option("--tau", s.tau, "Best-match CHRF below this scores 0 (default 0)");
  score->add_flag("--include-timeliness-in-xsc", s.include_timeliness,
                  "Add timeliness items to xSC");
  score->add_option("--char-order", s.char_order, "CHRF character n-gram order (default 6)");
  score->add_option("--word-order", s.word_order, "CHRF word n-gram order (default 2, 0 = chrF)");
  score->add_option("--beta", s.beta, "CHRF beta (default 2)");
  score->add_flag("--case-fold", s.case_fold, "Case-insensitive CHRF");

  std::vector<std::string> report_paths;
  std::optional<std::string> report_out;
  auto* report = app.add_subcommand("report", "Summarize one or more report.json files");
  report->add_option("reports", report_paths, "report.json files")->required();
  report->add_option("--out", report_out, "Write the summary here instead of stdout");

  std::string corr_report;
  std::string corr_external;
  std::string corr_metric = "xsc";
  std::optional<std::string> corr_out;
  auto* correlate =
      app.add_subcommand("correlate", "Correlate a report's pair matrix with an external matrix");
  correlate->add_option("report", corr_report, "report.json")->required();
  correlate->add_option("external", corr_external, "Matrix CSV (row/col = language codes)")
      ->required();
  correlate->add_option("--metric", corr_metric, "Matrix to use: xsc, xac or xtc")
      ->check(CLI::IsMember({"xsc", "xac", "xtc"}));
  correlate->add_option("--out", corr_out, "Write per-language row means CSV here");

  std::vector<std::string> argv_storage;
  argv_storage.reserve(args.size() + 1);
  argv_storage.emplace_back("xlc");
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (config) merge_config(s, *config);
    if (validate->parsed()) return cmd_validate(validate_path, out);
    if (collect->parsed()) return cmd_collect(s, out);
    if (embed->parsed()) return cmd_embed(s, out);
    if (score->parsed()) return cmd_score(s, out);
    if (report->parsed()) return cmd_report(report_paths, report_out, out);
    if (correlate->parsed()) {
      return cmd_correlate(corr_report, corr_external, corr_metric, corr_out, out);
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace xlc
