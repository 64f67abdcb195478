#include "xlc/consistency.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <thread>

namespace xlc {

namespace {

constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

struct Pair {
  std::size_t i;
  std::size_t j;
};

std::vector<Pair> upper_pairs(std::size_t n) {
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.push_back({i, j});
  }
  return pairs;
}

// Evaluates fn on every pair, possibly in parallel; results land by pair index
// so the outcome never depends on scheduling.
template <typename Result, typename Fn>
std::vector<Result> map_pairs(const std::vector<Pair>& pairs, std::size_t work_per_pair, Fn fn) {
  std::vector<Result> out(pairs.size());
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t threads = std::min<std::size_t>(hw, pairs.size());
  if (threads <= 1 || pairs.size() * work_per_pair < 4096) {
    for (std::size_t k = 0; k < pairs.size(); ++k) out[k] = fn(pairs[k]);
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t k = t; k < pairs.size(); k += threads) out[k] = fn(pairs[k]);
    });
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// PairMatrix

PairMatrix::PairMatrix(Languages languages)
    : languages_(std::move(languages)),
      values_(languages_.size() * languages_.size(), kUnset),
      degenerate_(languages_.size() * languages_.size(), 0) {}

std::size_t PairMatrix::index_of(const LanguageCode& lang) const {
  auto it = std::find(languages_.begin(), languages_.end(), lang);
  if (it == languages_.end()) throw Error("language " + lang.str() + " not in matrix");
  return static_cast<std::size_t>(it - languages_.begin());
}

bool PairMatrix::has(std::size_t i, std::size_t j) const { return !std::isnan(at(i, j)); }

void PairMatrix::set(std::size_t i, std::size_t j, double value, bool degenerate) {
  values_[i * size() + j] = value;
  degenerate_[i * size() + j] = degenerate ? 1 : 0;
}

void PairMatrix::set_pair(std::size_t i, std::size_t j, double value, bool degenerate) {
  set(i, j, value, degenerate);
  set(j, i, value, degenerate);
}

PairMatrix PairMatrix::reordered(const Languages& order) const {
  PairMatrix out(order);
  std::vector<std::size_t> src;
  for (const auto& lang : order) src.push_back(index_of(lang));
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = 0; j < order.size(); ++j) {
      out.set(i, j, at(src[i], src[j]), degenerate(src[i], src[j]));
    }
  }
  return out;
}

bool PairMatrix::is_symmetric(double tolerance) const {
  for (std::size_t i = 0; i < size(); ++i) {
    for (std::size_t j = i + 1; j < size(); ++j) {
      if (has(i, j) != has(j, i)) return false;
      if (has(i, j) && std::abs(at(i, j) - at(j, i)) > tolerance) return false;
    }
  }
  return true;
}

bool operator==(const PairMatrix& a, const PairMatrix& b) {
  if (a.languages_ != b.languages_ || a.degenerate_ != b.degenerate_) return false;
  for (std::size_t k = 0; k < a.values_.size(); ++k) {
    const double x = a.values_[k];
    const double y = b.values_[k];
    if (std::isnan(x) != std::isnan(y)) return false;
    if (!std::isnan(x) && x != y) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Config

std::string to_string(TimelinessMode mode) {
  return mode == TimelinessMode::prose ? "prose" : "formula";
}

TimelinessMode parse_timeliness_mode(const std::string& name) {
  if (name == "prose") return TimelinessMode::prose;
  if (name == "formula") return TimelinessMode::formula;
  throw Error("unknown xtc mode \"" + name + "\" (expected prose or formula)");
}

void ScoringConfig::validate() const {
  chrf.validate();
  if (!std::isfinite(tau) || tau < 0.0 || tau > 1.0) throw Error("tau must lie in [0,1]");
}

double mean_over_pairs(const PairMatrix& m) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    for (std::size_t j = i + 1; j < m.size(); ++j) {
      sum += m.at(i, j);
      ++n;
    }
  }
  if (n == 0) throw Error("need at least 2 languages");
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// xSC

MetricResult xsc_for_items(const AnswerSet& answers, const Dataset& dataset, Embedder& embedder,
                           const std::vector<std::string>& item_ids) {
  const auto& langs = dataset.languages;
  if (langs.size() < 2) throw Error("xsc: need at least 2 languages");
  if (item_ids.empty()) throw Error("xsc: no items to evaluate");
  const std::size_t n_items = item_ids.size();

  std::vector<std::string> texts;
  texts.reserve(langs.size() * n_items);
  for (const auto& lang : langs) {
    for (const auto& id : item_ids) texts.push_back(answers.at(lang, id));
  }
  const auto vectors = embedder.embed_batch(texts);
  auto emb = [&](std::size_t lang, std::size_t item) -> std::span<const float> {
    return vectors[lang * n_items + item].values;
  };

  const auto pairs = upper_pairs(langs.size());
  const auto cells = map_pairs<double>(pairs, n_items, [&](const Pair& p) {
    double sum = 0.0;
    for (std::size_t s = 0; s < n_items; ++s) sum += cosine(emb(p.i, s), emb(p.j, s));
    return sum / static_cast<double>(n_items);
  });

  MetricResult result;
  result.matrix = PairMatrix(langs);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    result.matrix.set_pair(pairs[k].i, pairs[k].j, cells[k]);
  }
  result.score = mean_over_pairs(result.matrix);
  result.items = n_items;
  return result;
}

MetricResult xsc(const AnswerSet& answers, const Dataset& dataset, Embedder& embedder,
                 bool include_timeliness) {
  std::vector<std::string> ids;
  for (const auto& item : dataset.qa_items) ids.push_back(item.id);
  if (include_timeliness) {
    for (const auto& item : dataset.timeliness_items) ids.push_back(item.id);
  }
  return xsc_for_items(answers, dataset, embedder, ids);
}

// ---------------------------------------------------------------------------
// Spearman-based metrics

MetricResult spearman_pairs(const Languages& languages,
                            const std::vector<std::vector<double>>& vectors) {
  if (languages.size() < 2) throw Error("need at least 2 languages");
  if (vectors.size() != languages.size()) throw Error("one score vector per language required");
  const auto pairs = upper_pairs(languages.size());
  const std::size_t n = vectors.front().size();
  const auto cells = map_pairs<Correlation>(pairs, n, [&](const Pair& p) {
    return spearman(vectors[p.i], vectors[p.j]);
  });
  MetricResult result;
  result.matrix = PairMatrix(languages);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    result.matrix.set_pair(pairs[k].i, pairs[k].j, cells[k].value, cells[k].degenerate);
    if (cells[k].degenerate) ++result.degenerate_cells;
  }
  result.score = mean_over_pairs(result.matrix);
  result.items = n;
  return result;
}

std::vector<std::vector<double>> accuracy_vectors(const AnswerSet& answers, const Dataset& dataset,
                                                  const ChrfConfig& cfg) {
  std::vector<std::vector<double>> acc;
  for (const auto& lang : dataset.languages) {
    auto& v = acc.emplace_back();
    v.reserve(dataset.qa_items.size());
    for (const auto& item : dataset.qa_items) {
      v.push_back(chrf(answers.at(lang, item.id), item.at(lang).answer, cfg));
    }
  }
  return acc;
}

MetricResult xac(const AnswerSet& answers, const Dataset& dataset, const ChrfConfig& cfg) {
  if (dataset.qa_items.size() < 2) {
    throw Error("xac: need at least 2 QA items, got " + std::to_string(dataset.qa_items.size()));
  }
  return spearman_pairs(dataset.languages, accuracy_vectors(answers, dataset, cfg));
}

double timeliness_score(std::string_view answer, std::span<const std::string> candidates,
                        const ChrfConfig& cfg, TimelinessMode mode, double tau) {
  if (candidates.empty()) throw Error("timeliness_score: empty candidate list");
  double best = -1.0;
  std::size_t best_rank = 0;
  for (std::size_t r = 0; r < candidates.size(); ++r) {
    const double score = chrf(answer, candidates[r], cfg);
    if (score > best) {
      best = score;
      best_rank = r + 1;
    }
  }
  if (best <= 0.0 || best < tau) return 0.0;
  const double divisor = mode == TimelinessMode::prose
                             ? static_cast<double>(best_rank)
                             : static_cast<double>(candidates.size());
  return best / divisor;
}

std::vector<std::vector<double>> timeliness_vectors(const AnswerSet& answers,
                                                    const Dataset& dataset,
                                                    const ChrfConfig& cfg, TimelinessMode mode,
                                                    double tau) {
  std::vector<std::vector<double>> out;
  for (const auto& lang : dataset.languages) {
    auto& v = out.emplace_back();
    v.reserve(dataset.timeliness_items.size());
    for (const auto& item : dataset.timeliness_items) {
      v.push_back(timeliness_score(answers.at(lang, item.id), item.at(lang).candidates, cfg,
                                   mode, tau));
    }
  }
  return out;
}

MetricResult xtc(const AnswerSet& answers, const Dataset& dataset, const ChrfConfig& cfg,
                 TimelinessMode mode, double tau) {
  if (dataset.timeliness_items.size() < 2) {
    throw Error("xtc: need at least 2 timeliness items, got " +
                std::to_string(dataset.timeliness_items.size()));
  }
  return spearman_pairs(dataset.languages, timeliness_vectors(answers, dataset, cfg, mode, tau));
}

bool xc_degenerate(double xsc, double xac, double xtc) {
  return !(xsc > 0.0 && xac > 0.0 && xtc > 0.0);
}

double xc(double xsc, double xac, double xtc) {
  if (xc_degenerate(xsc, xac, xtc)) return 0.0;
  return 3.0 / (1.0 / xsc + 1.0 / xac + 1.0 / xtc);
}

// ---------------------------------------------------------------------------
// Domains

DomainBreakdown domain_breakdown(const AnswerSet& answers, const Dataset& dataset,
                                 Embedder& embedder) {
  std::map<std::string, std::vector<std::string>> ids_by_domain;
  for (const auto& item : dataset.qa_items) ids_by_domain[item.domain].push_back(item.id);

  DomainBreakdown out;
  for (const auto& [domain, pool] : dataset.few_shot_pool) {
    if (!ids_by_domain.contains(domain)) {
      out.warnings.push_back("domain " + domain + " has no evaluation items; omitted");
    }
  }
  for (const auto& [domain, ids] : ids_by_domain) {
    auto r = xsc_for_items(answers, dataset, embedder, ids);
    out.domains[domain] = DomainScore{ids.size(), r.score, std::move(r.matrix)};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix correlation

MatrixCorrelation correlate_matrices(const PairMatrix& consistency, const PairMatrix& external) {
  const std::set<LanguageCode> a(consistency.languages().begin(), consistency.languages().end());
  const std::set<LanguageCode> b(external.languages().begin(), external.languages().end());
  if (a != b || a.size() != consistency.size() || b.size() != external.size()) {
    std::string only_a;
    std::string only_b;
    for (const auto& l : a) if (!b.contains(l)) only_a += " " + l.str();
    for (const auto& l : b) if (!a.contains(l)) only_b += " " + l.str();
    std::string message = "language mismatch between matrices";
    if (!only_a.empty()) message += "; only in consistency matrix:" + only_a;
    if (!only_b.empty()) message += "; only in external matrix:" + only_b;
    if (only_a.empty() && only_b.empty()) message += "; duplicate language codes";
    throw Error(message);
  }
  const PairMatrix ext = external.reordered(consistency.languages());

  MatrixCorrelation out;
  std::vector<double> xs;
  std::vector<double> ys;
  for (std::size_t i = 0; i < consistency.size(); ++i) {
    double row_c = 0.0;
    double row_e = 0.0;
    std::size_t row_n = 0;
    for (std::size_t j = 0; j < consistency.size(); ++j) {
      if (i == j || !consistency.has(i, j) || !ext.has(i, j)) continue;
      xs.push_back(consistency.at(i, j));
      ys.push_back(ext.at(i, j));
      row_c += consistency.at(i, j);
      row_e += ext.at(i, j);
      ++row_n;
    }
    if (row_n > 0) {
      out.row_means.push_back({consistency.languages()[i], row_c / static_cast<double>(row_n),
                               row_e / static_cast<double>(row_n)});
    }
  }
  if (xs.size() < 2) throw Error("correlate: fewer than 2 cells set in both matrices");
  out.n_pairs = xs.size();
  out.pearson = pearson(xs, ys);
  out.spearman = spearman(xs, ys);
  return out;
}

}  // namespace xlc
