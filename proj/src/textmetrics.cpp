#include "xlc/textmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>

#include "xlc/error.hpp"
#include "xlc/text.hpp"

namespace xlc {

void ChrfConfig::validate() const {
  if (char_ngram_max < 1) throw Error("chrf: char_ngram_max must be >= 1");
  if (word_ngram_max < 0) throw Error("chrf: word_ngram_max must be >= 0");
  if (!(beta > 0.0) || !std::isfinite(beta)) throw Error("chrf: beta must be > 0");
}

namespace {

template <typename Token>
using NgramCounts = std::map<std::vector<Token>, int>;

template <typename Token>
NgramCounts<Token> count_ngrams(const std::vector<Token>& tokens, int order) {
  NgramCounts<Token> counts;
  const auto n = static_cast<std::size_t>(order);
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[std::vector<Token>(tokens.begin() + i, tokens.begin() + i + n)];
  }
  return counts;
}

struct OrderStats {
  int hyp_total = 0;
  int ref_total = 0;
  int matched = 0;
};

template <typename Token>
OrderStats order_stats(const std::vector<Token>& hyp, const std::vector<Token>& ref,
                       int order) {
  const auto h = count_ngrams(hyp, order);
  const auto r = count_ngrams(ref, order);
  OrderStats s;
  for (const auto& [gram, n] : h) {
    s.hyp_total += n;
    auto it = r.find(gram);
    if (it != r.end()) s.matched += std::min(n, it->second);
  }
  for (const auto& [gram, n] : r) s.ref_total += n;
  return s;
}

double f_beta(const OrderStats& s, double beta) {
  const double precision = static_cast<double>(s.matched) / s.hyp_total;
  const double recall = static_cast<double>(s.matched) / s.ref_total;
  const double b2 = beta * beta;
  const double denom = b2 * precision + recall;
  return denom > 0.0 ? (1.0 + b2) * precision * recall / denom : 0.0;
}

std::vector<char32_t> char_tokens(const std::string& text, bool strip_ws) {
  std::vector<char32_t> out;
  for (char32_t c : to_code_points(text)) {
    if (strip_ws && is_white_space(c)) continue;
    out.push_back(c);
  }
  return out;
}

}  // namespace

double chrf(std::string_view hypothesis, std::string_view reference,
            const ChrfConfig& cfg) {
  cfg.validate();
  std::string hyp = cfg.case_fold ? case_fold(hypothesis) : nfc(hypothesis);
  std::string ref = cfg.case_fold ? case_fold(reference) : nfc(reference);
  if (hyp.empty() || ref.empty()) return 0.0;

  double sum = 0.0;
  int effective = 0;
  auto accumulate = [&](const OrderStats& s) {
    if (s.hyp_total == 0 || s.ref_total == 0) return;
    sum += f_beta(s, cfg.beta);
    ++effective;
  };

  const auto hyp_chars = char_tokens(hyp, cfg.strip_whitespace_for_char_ngrams);
  const auto ref_chars = char_tokens(ref, cfg.strip_whitespace_for_char_ngrams);
  for (int n = 1; n <= cfg.char_ngram_max; ++n) {
    accumulate(order_stats(hyp_chars, ref_chars, n));
  }
  if (cfg.word_ngram_max > 0) {
    const auto hyp_words = split_whitespace(hyp);
    const auto ref_words = split_whitespace(ref);
    for (int n = 1; n <= cfg.word_ngram_max; ++n) {
      accumulate(order_stats(hyp_words, ref_words, n));
    }
  }
  return effective == 0 ? 0.0 : sum / effective;
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 hold ranks i+1..j
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error("correlation: length mismatch (" + std::to_string(x.size()) + " vs " +
                std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw Error("correlation: need at least 2 values");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
      throw Error("correlation: non-finite input");
    }
  }
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  const double r = sxy / std::sqrt(sxx * syy);
  return {std::clamp(r, -1.0, 1.0), false};
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw Error("spearman: length mismatch (" + std::to_string(x.size()) + " vs " +
                std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw Error("spearman: need at least 2 values");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  return pearson(rx, ry);
}

namespace {

template <typename T>
double cosine_impl(std::span<const T> u, std::span<const T> v) {
  if (u.empty() || v.empty()) throw Error("cosine: empty vector");
  if (u.size() != v.size()) {
    throw Error("cosine: dimension mismatch (" + std::to_string(u.size()) + " vs " +
                std::to_string(v.size()) + ")");
  }
  double dot = 0.0;
  double nu = 0.0;
  double nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double a = u[i];
    const double b = v[i];
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

}  // namespace

double cosine(std::span<const float> u, std::span<const float> v) {
  return cosine_impl(u, v);
}

double cosine(std::span<const double> u, std::span<const double> v) {
  return cosine_impl(u, v);
}

}  // namespace xlc
