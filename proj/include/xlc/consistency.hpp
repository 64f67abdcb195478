#pragma once

// Cross-lingual consistency metrics.
//
//   xSC  mean over language pairs of the item-averaged cosine between the
//        embedded answers of the two languages
//   xAC  mean over language pairs of Spearman(acc_i, acc_j), where acc_i[t] is
//        the CHRF of language i's answer to item t against language i's own
//        ground truth
//   xTC  mean over language pairs of Spearman(T_i, T_j) over timeliness
//        items, T_i[t] from timeliness_score
//   xC   harmonic mean of the three; 0 (flagged) unless all three are > 0
//
// Every pairwise function is symmetric, so each unordered pair is computed
// once; the mean over unordered pairs equals the ordered-pair mean with the
// L(L-1) denominator.

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xlc/answers.hpp"
#include "xlc/dataset.hpp"
#include "xlc/embedding.hpp"
#include "xlc/textmetrics.hpp"

namespace xlc {

class PairMatrix {
 public:
  PairMatrix() = default;
  explicit PairMatrix(Languages languages);

  std::size_t size() const noexcept { return languages_.size(); }
  const Languages& languages() const noexcept { return languages_; }
  std::size_t index_of(const LanguageCode& lang) const;  // throws if absent

  // NaN when unset (always on the diagonal).
  double at(std::size_t i, std::size_t j) const { return values_[i * size() + j]; }
  bool has(std::size_t i, std::size_t j) const;
  bool degenerate(std::size_t i, std::size_t j) const { return degenerate_[i * size() + j] != 0; }

  void set(std::size_t i, std::size_t j, double value, bool degenerate = false);
  // Sets (i,j) and (j,i).
  void set_pair(std::size_t i, std::size_t j, double value, bool degenerate = false);

  // Same cells, rows/columns arranged in `order` (any permutation or subset
  // of this matrix's languages).
  PairMatrix reordered(const Languages& order) const;

  bool is_symmetric(double tolerance) const;

  friend bool operator==(const PairMatrix& a, const PairMatrix& b);

 private:
  Languages languages_;
  std::vector<double> values_;
  std::vector<char> degenerate_;
};

struct MetricResult {
  double score = 0.0;
  PairMatrix matrix;
  std::size_t degenerate_cells = 0;  // unordered pairs whose Spearman was undefined
  std::size_t items = 0;
};

enum class TimelinessMode {
  prose,    // chrf of the best-matching candidate divided by its rank
  formula,  // max chrf over candidates divided by the number of candidates R
};

std::string to_string(TimelinessMode mode);
TimelinessMode parse_timeliness_mode(const std::string& name);

struct ScoringConfig {
  ChrfConfig chrf;
  TimelinessMode xtc_mode = TimelinessMode::prose;
  double tau = 0.0;  // best chrf below this scores 0
  bool include_timeliness_in_xsc = false;

  void validate() const;
};

// Mean of the strict upper triangle, summed in row-major order.
double mean_over_pairs(const PairMatrix& m);

MetricResult xsc(const AnswerSet& answers, const Dataset& dataset, Embedder& embedder,
                 bool include_timeliness = false);

// xSC over an explicit list of QA item ids (timeliness ids allowed when
// include_timeliness is on).
MetricResult xsc_for_items(const AnswerSet& answers, const Dataset& dataset,
                           Embedder& embedder, const std::vector<std::string>& item_ids);

MetricResult xac(const AnswerSet& answers, const Dataset& dataset, const ChrfConfig& cfg);

// Per-language accuracy vectors (CHRF against own-language ground truth), in
// dataset item order.
std::vector<std::vector<double>> accuracy_vectors(const AnswerSet& answers,
                                                  const Dataset& dataset,
                                                  const ChrfConfig& cfg);

double timeliness_score(std::string_view answer, std::span<const std::string> candidates,
                        const ChrfConfig& cfg, TimelinessMode mode = TimelinessMode::prose,
                        double tau = 0.0);

std::vector<std::vector<double>> timeliness_vectors(const AnswerSet& answers,
                                                    const Dataset& dataset,
                                                    const ChrfConfig& cfg,
                                                    TimelinessMode mode, double tau);

MetricResult xtc(const AnswerSet& answers, const Dataset& dataset, const ChrfConfig& cfg,
                 TimelinessMode mode = TimelinessMode::prose, double tau = 0.0);

// Pair matrix of Spearman correlations between per-language score vectors.
MetricResult spearman_pairs(const Languages& languages,
                            const std::vector<std::vector<double>>& vectors);

double xc(double xsc, double xac, double xtc);
bool xc_degenerate(double xsc, double xac, double xtc);

struct DomainScore {
  std::size_t items = 0;
  double xsc = 0.0;
  PairMatrix matrix;
};

struct DomainBreakdown {
  std::map<std::string, DomainScore> domains;
  std::vector<std::string> warnings;
};

// xSC restricted to each domain's QA items. Domains named only by the
// few-shot pool have no items and are reported as warnings.
DomainBreakdown domain_breakdown(const AnswerSet& answers, const Dataset& dataset,
                                 Embedder& embedder);

struct RowMean {
  LanguageCode lang;
  double consistency = 0.0;
  double external = 0.0;
};

struct MatrixCorrelation {
  Correlation pearson;
  Correlation spearman;
  std::size_t n_pairs = 0;
  std::vector<RowMean> row_means;  // in the consistency matrix's language order
};

// Correlates the off-diagonal cells set in both matrices. Language sets must
// match (order may differ); throws naming the differing codes otherwise.
MatrixCorrelation correlate_matrices(const PairMatrix& consistency, const PairMatrix& external);

}  // namespace xlc
