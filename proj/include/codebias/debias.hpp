#pragma once

// Baseline mitigations (bias-only model for reweighting and product of
// experts, adversarial training, gradient reversal) and the single-step
// renaming attack.

#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "codebias/corpus.hpp"
#include "codebias/model.hpp"
#include "codebias/vocab.hpp"

namespace codebias {

// ---------------------------------------------------------------- examples

// Model input for one item of a corpus.
Example make_example(const Corpus& corpus, const Vocabulary& vocab, const Item& item);

// Indices into the sorted bias vocabulary of the bias words present in a
// sample (the gradient-reversal target).
std::vector<int> bias_members(const Sample& sample, const std::vector<std::string>& bias_words);

// ---------------------------------------------------------------- bias-only

// Token positions left visible to the bias-only model: the planted bias
// tokens (VulnDet) or every occurrence of the target identifier (TypeInf).
std::vector<std::size_t> bias_only_positions(const Sample& sample, std::optional<std::size_t> target);

// Ids with everything outside bias_only_positions replaced by [MASK].
std::vector<int> bias_only_ids(const Sample& sample, std::optional<std::size_t> target, const Vocabulary& vocab);

struct BiasOnlyModel {
  ModelParams params;
  std::string rule;

  std::vector<double> probs(const Sample& sample, std::optional<std::size_t> target, const Vocabulary& vocab) const;
};

// Trains the standard architecture on masked inputs of the given items.
// Throws ConfigError if the bias vocabulary is empty or masking leaves no
// visible token in any item.
BiasOnlyModel train_bias_only(const Corpus& corpus, std::span<const Item> items, const Vocabulary& vocab,
                              const ModelConfig& model_cfg, const FitConfig& fit_cfg);

// ---------------------------------------------------------------- losses

// (1 - p_b_true) * CE(p_d, y).
double reweight_loss(double p_b_true, std::span<const double> p_d, int y);

// CE of the renormalized product p_d * max(p_b, 1e-12).
double poe_loss(std::span<const double> p_b, std::span<const double> p_d, int y);

// CE(x) + CE(x').
double adv_train_loss(const ModelParams& params, std::span<const int> ids, std::span<const int> adv_ids,
                      std::optional<std::size_t> target, int y);

struct GradRevValue {
  double task_ce = 0.0;
  double bias_loss = 0.0;
  Grads grads;
};

// Task CE plus the bias head's mean sigmoid BCE against the membership
// vector; the encoder receives grad(task) - mu * grad(bias).
GradRevValue grad_reversal_loss(const ModelParams& params, const Example& example, double mu = 0.1);

// ---------------------------------------------------------------- attack

struct AttackConfig {
  std::size_t k = 8;           // candidates evaluated exactly per identifier
  std::size_t pool_cap = 256;  // names sampled from the corpus
  std::size_t fresh = 16;      // random names not seen in any project
  std::uint64_t seed = 0;
};

struct CandidateName {
  std::string text;
  std::vector<std::string> pieces;
  std::vector<int> ids;
  std::set<std::string> projects;  // empty for fresh names
};

struct CandidatePool {
  std::vector<CandidateName> names;
};

// Fresh identifier names (lowercase CV words, one or two pieces) absent from
// the corpus. Their pieces must be added to the vocabulary before building
// the pool.
std::vector<std::string> fresh_names(const Corpus& corpus, std::size_t count, std::uint64_t seed);
std::vector<std::string> name_pieces(const std::vector<std::string>& names);

// Declared names (function, parameters, locals) of every sample, sampled down
// to pool_cap, plus the fresh names.
CandidatePool build_candidate_pool(const Corpus& corpus, const Vocabulary& vocab,
                                   const std::vector<std::string>& fresh, const AttackConfig& cfg);

// Function name, parameters and declared locals, sorted.
std::vector<std::string> renameable_identifiers(const Sample& sample);

struct AdvSample {
  std::string sample_id;
  std::optional<std::size_t> target;
  int label = 0;
  std::string old_name;
  std::string new_name;
  std::vector<Token> tokens;  // perturbed
  std::vector<int> ids;       // perturbed
  double loss_before = 0.0;
  double loss_after = 0.0;
  bool perturbed = false;  // false: original passed through
  bool eligible = true;    // false: nothing renameable
};

// One consistent rename of one identifier, chosen among the top-k
// first-order candidates per identifier by exact loss. Candidates have the
// same piece count as the replaced name, do not occur in the sample, and
// occur in some other project (or are fresh). Throws NoRenameable.
AdvSample bfs_attack(const ModelParams& params, const Vocabulary& vocab, const Sample& sample,
                     std::optional<std::size_t> target, int label, const CandidatePool& pool, std::size_t k = 8);

// Attacks every item; ineligible items and attacks that fail to raise the
// loss pass the original through with perturbed = false.
std::vector<AdvSample> build_adversarial_set(const ModelParams& params, const Vocabulary& vocab,
                                             const Corpus& corpus, std::span<const Item> items,
                                             const CandidatePool& pool, std::size_t k = 8);

// Sample with the perturbed tokens; bias_token_indices recomputed against
// the corpus bias vocabulary.
Sample apply_perturbation(const Sample& original, const AdvSample& adv, const std::set<std::string>& bias_vocab);

// Corpus JSON-lines with an extra "perturbation" object per sample.
void write_adversarial_set(const Corpus& corpus, std::span<const AdvSample> set, std::ostream& out);

}  // namespace codebias
