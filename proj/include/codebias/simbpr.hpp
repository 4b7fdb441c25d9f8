#pragma once

// Logic-closeness embeddings, the training-set similarity matrix, the
// unshuffle/batchify ordering built from it, and the batch partition
// regularization (BPR) loss with its delayed-update coefficient.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "codebias/corpus.hpp"
#include "codebias/lang.hpp"

namespace codebias {

enum class EmbedMode : std::uint8_t { AstBow, CfgPaths };
std::string_view to_string(EmbedMode mode);
EmbedMode embed_mode_from_string(std::string_view name);

using PathVector = std::array<double, kNumStmtKinds>;

struct LogicEmbedding {
  EmbedMode mode = EmbedMode::AstBow;
  std::map<std::string, double> bow;  // AstBow: sparse counts
  std::vector<PathVector> paths;      // CfgPaths: unit-norm kind counts; empty list = no paths

  bool empty() const { return mode == EmbedMode::AstBow ? bow.empty() : paths.empty(); }
  bool operator==(const LogicEmbedding&) const = default;
};

// Bag of the one-hop AST neighbourhood of a declaration target, literals
// abstracted to their token kind ("NumberLit", ...). Throws NotADeclaration.
LogicEmbedding mu_ast(const Sample& sample, std::size_t target_token);

struct Apsp {
  std::size_t n = 0;
  std::vector<int> dist;  // n x n hop counts, -1 = unreachable
  std::vector<int> next;  // n x n first hop, -1 when none

  int distance(std::size_t u, std::size_t v) const { return dist[u * n + v]; }
  // Block sequence u..v; empty when unreachable.
  std::vector<int> path(std::size_t u, std::size_t v) const;
};

// Unit edge weights. Among equal-length paths the next hop is the lowest
// block index.
Apsp floyd_warshall(const Cfg& cfg);

// One unit-norm statement-kind count vector per shortest path between
// distinct reachable blocks; paths through statement-free blocks only are
// skipped.
LogicEmbedding mu_cfg(const Sample& sample);
LogicEmbedding mu_cfg(const Cfg& cfg);

// AstBow: cosine of the count vectors. CfgPaths: mean over a's paths of the
// best inner product against b's paths. 0 when either side is empty; result
// clamped to [0,1]. Throws ModeMismatch.
double kappa(const LogicEmbedding& a, const LogicEmbedding& b);

struct SimilarityMatrix {
  EmbedMode mode = EmbedMode::AstBow;
  std::size_t n = 0;
  std::vector<double> values;  // n x n, symmetric
  std::size_t pairs_filled = 0;
  std::size_t kappa_evaluations = 0;

  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  bool operator==(const SimilarityMatrix& o) const { return mode == o.mode && n == o.n && values == o.values; }
};

// All pairwise scores. Identical embeddings share one kappa evaluation.
// CfgPaths scores are symmetrized as max(k(a,b), k(b,a)).
SimilarityMatrix similarity_matrix(std::span<const LogicEmbedding> embeddings);

// Embeds every item (AstBow uses the item's target).
std::vector<LogicEmbedding> embed_items(const Corpus& corpus, std::span<const Item> items, EmbedMode mode);

// Visits off-diagonal pairs by descending score (ties by (i, j)) and appends
// unseen endpoints; samples with no positive pair follow in index order.
std::vector<std::size_t> unshuffle(const SimilarityMatrix& matrix);

// Consecutive chunks of size B, last one possibly shorter. Throws
// InvalidArgument for B < 2.
std::vector<std::vector<std::size_t>> batchify(std::span<const std::size_t> ordering, std::size_t batch_size);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

struct BprValue {
  double loss = 0.0;
  std::size_t pairs = 0;                   // same-label unordered pairs
  std::vector<std::vector<double>> d_reprs;  // dloss/dr_i
};

// Mean over unordered same-label pairs of w_ij * (1 - cos(r_i, r_j)); 0 for
// an empty pair set. weights is n x n row-major.
BprValue bpr_loss_grad(std::span<const std::vector<double>> reprs, std::span<const int> labels,
                       std::span<const double> weights);
double bpr_loss(std::span<const std::vector<double>> reprs, std::span<const int> labels,
                std::span<const double> weights);

// 2 / (1 + exp(-10 p)) - 1 for training progress p in [0, 1].
double gamma_p(double progress);

// Binary upper-triangle dump preceded by a JSON header line
// {"mode", "n", "checksum"}.
void save_similarity(const SimilarityMatrix& matrix, const std::filesystem::path& path);
SimilarityMatrix load_similarity(const std::filesystem::path& path);

}  // namespace codebias
