#pragma once

#include <span>
#include <string_view>
#include <vector>

namespace xlc {

// Character/word n-gram F-score. Defaults follow chrF++ (chars 1..6,
// words 1..2, beta 2); word_ngram_max = 0 gives plain chrF.
struct ChrfConfig {
  int char_ngram_max = 6;
  int word_ngram_max = 2;
  double beta = 2.0;
  bool strip_whitespace_for_char_ngrams = true;
  bool case_fold = false;

  void validate() const;  // throws xlc::Error
};

// Score in [0,1]. Inputs are NFC-normalized internally. Orders for which the
// hypothesis or the reference has no n-grams are left out of the average;
// an empty side (or no usable order at all) scores 0.
double chrf(std::string_view hypothesis, std::string_view reference,
            const ChrfConfig& cfg = {});

struct Correlation {
  double value = 0.0;
  bool degenerate = false;  // an input had zero variance; value forced to 0
};

// Pearson correlation of fractional (tie-averaged) ranks.
// Throws xlc::Error unless x.size() == y.size() >= 2.
Correlation spearman(std::span<const double> x, std::span<const double> y);

// Plain product-moment correlation, same length and degeneracy rules.
Correlation pearson(std::span<const double> x, std::span<const double> y);

// 1-based ranks, ties get the mean of the ranks they span.
std::vector<double> fractional_ranks(std::span<const double> values);

// dot(u,v)/(|u||v|); 0 if either operand has zero norm. Throws on dimension
// mismatch or empty input.
double cosine(std::span<const float> u, std::span<const float> v);
double cosine(std::span<const double> u, std::span<const double> v);

}  // namespace xlc
