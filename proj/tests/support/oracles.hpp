#pragma once

// Reference computations for the tests. Deliberately naive and written
// without calling into the library's metric code: own UTF-8 decoding, n-gram
// matching by pairwise comparison, ranks by counting, and the literal
// ordered-pair sums with the L(L-1) denominator.

#include <string>
#include <vector>

namespace oracle {

std::u32string decode_utf8(const std::string& s);

// Per-order F-beta averaged over orders where both sides have n-grams;
// whitespace (ASCII and U+3000) removed for characters, split on it for words.
double chrf(const std::string& hyp, const std::string& ref, int char_max = 6, int word_max = 2,
            double beta = 2.0);

// 1 - 6 sum d^2 / (n (n^2 - 1)); valid only without ties.
double spearman_d2(const std::vector<double>& x, const std::vector<double>& y);

// Average-tie ranks by counting, then Pearson. Returns 0 for constant input.
double spearman_counting(const std::vector<double>& x, const std::vector<double>& y);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

double cosine(const std::vector<float>& u, const std::vector<float>& v);

// sum over i != j of cell(i, j), divided by L(L-1).
template <typename Cell>
double ordered_pair_mean(std::size_t languages, Cell cell) {
  double sum = 0.0;
  for (std::size_t i = 0; i < languages; ++i) {
    for (std::size_t j = 0; j < languages; ++j) {
      if (i != j) sum += cell(i, j);
    }
  }
  return sum / static_cast<double>(languages * (languages - 1));
}

// Prose reading: best candidate's chrf over its 1-based rank.
double timeliness_prose(const std::string& answer, const std::vector<std::string>& candidates);

}  // namespace oracle
