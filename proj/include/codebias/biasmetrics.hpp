#pragma once

// Project-specific bias measurements: the conditional inverse document
// frequency (Cond-Idf) table, sorted mean-IG distributions, the polynomial
// fit relating the two, and top-n bias ratios.

#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "codebias/attribution.hpp"
#include "codebias/corpus.hpp"

namespace codebias {

struct CondIdfRow {
  std::size_t count = 0;        // occurrences of w
  std::size_t label_count = 0;  // occurrences of w in items labelled l
  std::size_t df = 0;           // projects containing w
  double cond_p = 0.0;          // label_count / count
  double idf = 0.0;             // ln(N / df)
  double cond_idf = 0.0;        // cond_p * idf
};

struct CondIdfTable {
  int label = 0;
  std::size_t num_projects = 0;
  std::map<std::string, CondIdfRow> rows;

  // 0 for words not in the table.
  double value(std::string_view word) const;
};

// Occurrences are counted per item, so a TypeInf sample with several
// targets contributes its tokens once per target. N is the number of
// distinct projects among the samples. Throws UnknownLabel.
CondIdfTable cond_idf(const Corpus& corpus, int label);

void write_cond_idf_csv(std::span<const CondIdfTable> tables, std::ostream& out);

// ---------------------------------------------------------------- categories

enum class LexCategory : std::uint8_t {
  DeclarationVariable,
  FunctionName,
  Identifier,
  MacroLike,
  Api,
  Keyword,
  Literal,
  Operator,
  Delimiter,
  Other,
};
std::string_view to_string(LexCategory c);

// TypeInf: DeclarationVariable or Other. VulnDet: the finer lexical classes.
std::vector<LexCategory> token_categories(const Sample& sample);

// ---------------------------------------------------------------- IG ranking

struct IgEntry {
  std::string word;
  double mean_ig = 0.0;
  std::size_t occurrences = 0;
  LexCategory category = LexCategory::Other;
};

struct SortedIgDistribution {
  std::vector<IgEntry> entries;  // mean_ig descending, ties by word
};

struct AttributedSample {
  const Sample* sample = nullptr;
  std::vector<double> per_token;
};

// Per-word mean of per-token weights over all occurrences. A word's category
// is its most frequent per-occurrence category. Throws Misalignment.
SortedIgDistribution mean_ig_distribution(std::span<const AttributedSample> attributed);

nlohmann::json to_json(const SortedIgDistribution& dist);

// ---------------------------------------------------------------- polyfit

struct PolyFit {
  int order = 0;
  double center = 0.0;      // x is mapped to t = (x - center) / half_range
  double half_range = 1.0;
  std::vector<double> coeffs;  // in t, lowest degree first
  double residual_norm = 0.0;

  double operator()(double x) const;
  // Coefficients in the original x, lowest degree first.
  std::vector<double> raw_coefficients() const;
};

// Least squares via Householder QR on the standardized Vandermonde matrix.
// Throws Underdetermined if xs.size() <= order or the xs span fewer than
// order + 1 distinct values.
PolyFit polyfit(std::span<const double> xs, std::span<const double> ys, int order = 10);

double pearson(std::span<const double> a, std::span<const double> b);

struct Alignment {
  double pearson_r = 0.0;
  std::vector<double> cond_idf;  // per rank
  std::vector<double> fitted;    // per rank
  PolyFit fit;
};

// Cond-Idf reindexed by IG rank (words missing from the table are dropped),
// fitted against the rank index, then correlated with mean_ig. Throws
// DegenerateVariance if either series is constant.
Alignment alignment(const SortedIgDistribution& ig, const CondIdfTable& table, int order = 10);

// ---------------------------------------------------------------- bias ratio

enum class RatioMode : std::uint8_t { Contains, Only };

// Fraction of samples whose top-n tokens (n capped at T) contain a bias word
// (Contains) or consist only of bias words (Only).
double topn_bias_ratio(std::span<const AttributedSample> attributed, const std::set<std::string>& bias_vocab,
                       std::size_t n, RatioMode mode);

}  // namespace codebias
