#pragma once

// Integrated gradients over token embeddings with a zero baseline.

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "codebias/model.hpp"

namespace codebias {

struct AttributionVector {
  Tensor raw;                     // T x d signed attributions
  std::vector<double> per_token;  // L1 over d, then L2-normalized over T
  int m_used = 0;
  int target_class = 0;
};

// raw = x * (1/m) sum_{k=1..m} grad f_c(k/m * x), f_c the pre-softmax logit
// of target_class. Throws InvalidArgument for m < 1 or a bad class.
AttributionVector integrated_gradients(const ModelParams& params, std::span<const int> ids,
                                       std::optional<std::size_t> target, int target_class, int m = 50);

// Recomputes per_token from raw (zero raw leaves per_token all zero).
std::vector<double> summarize_per_token(const Tensor& raw);

// Indices of the n largest per_token weights, ties to the lower index.
// Throws InvalidArgument unless 1 <= n <= T.
std::vector<std::size_t> top_n_tokens(const AttributionVector& attr, std::size_t n);

struct AttributionRecord {
  std::string sample_id;
  std::optional<std::size_t> target_token;
  int target_class = 0;
  int m = 0;
  std::vector<double> per_token;
};

// JSON lines {"sample_id", "target", "target_token"?, "m", "per_token"}.
void write_attributions(std::span<const AttributionRecord> records, std::ostream& out);
std::vector<AttributionRecord> read_attributions(std::istream& in);

}  // namespace codebias
