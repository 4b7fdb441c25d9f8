#pragma once

// Tiny classifier with handwritten gradients:
//
//   x_t    = E[id_t]                                  token embeddings
//   pooled = mean_t x_t
//   input  = pooled                    (VulnDet)
//          = [E[id_target]; pooled]    (TypeInf)
//   r      = act(W1 input + b1)        act = tanh, or identity for probes
//   logits = W_g r + b_g               classification head g
//   z      = W_h r + b_h               partitioning head h
//   q      = W_b r + b_b               bias head (gradient reversal)
//
// Everything is double precision.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "codebias/corpus.hpp"
#include "codebias/vocab.hpp"

namespace codebias {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double* row(std::size_t r) { return data.data() + r * cols; }
  const double* row(std::size_t r) const { return data.data() + r * cols; }
  std::size_t size() const { return data.size(); }

  bool operator==(const Tensor&) const = default;
};

enum class Activation : std::uint8_t { Tanh, Identity };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t head_dim = 32;
  int num_classes = 2;
  std::size_t bias_dim = 1;  // width of the bias head (|bias vocabulary|)
  Task task = Task::VulnDet;
  Activation activation = Activation::Tanh;

  std::size_t input_width() const { return task == Task::TypeInf ? 2 * embed_dim : embed_dim; }
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kNumTensors = 9;

struct ModelParams {
  ModelConfig cfg;
  Tensor E;    // vocab_size x embed_dim
  Tensor W1;   // hidden x input_width
  Tensor b1;   // hidden x 1
  Tensor W_g;  // num_classes x hidden
  Tensor b_g;
  Tensor W_h;  // head_dim x hidden
  Tensor b_h;
  Tensor W_b;  // bias_dim x hidden
  Tensor b_b;

  std::array<Tensor*, kNumTensors> tensors();
  std::array<const Tensor*, kNumTensors> tensors() const;
  static const std::array<std::string_view, kNumTensors>& tensor_names();

  bool operator==(const ModelParams&) const = default;
};

using Grads = ModelParams;

// Same shapes, all zeros.
ModelParams zeros_like(const ModelParams& params);

// Glorot-uniform weights, a = sqrt(6 / (fan_in + fan_out)); zero biases.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

bool all_finite(const ModelParams& params);

struct ForwardTrace {
  Tensor x;  // T x d embeddings used
  std::optional<std::size_t> target;
  std::vector<double> pooled;
  std::vector<double> input;
  std::vector<double> pre;
  std::vector<double> hidden;  // r = f(x)
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> part;         // h(r), filled when heads requested
  std::vector<double> bias_logits;  // bias head, filled when heads requested

  const std::vector<double>& repr() const { return hidden; }
};

// Gathers E rows for the ids.
Tensor embed(const ModelParams& params, std::span<const int> ids);

ForwardTrace forward(const ModelParams& params, std::span<const int> ids, std::optional<std::size_t> target,
                     bool heads = false);
// Forward from an explicit embedding matrix (used by attribution).
ForwardTrace forward_embeddings(const ModelParams& params, Tensor x, std::optional<std::size_t> target,
                                bool heads = false);

// Upstream gradients at the three heads. The bias-head gradient reaches the
// encoder multiplied by -reversal; the bias head itself gets it unchanged.
struct OutputGrads {
  std::vector<double> d_logits;
  std::vector<double> d_part;
  std::vector<double> d_bias;
  double reversal = 0.0;
};

// Accumulates parameter gradients into grads (E rows via ids when given) and,
// if d_x is non-null, writes the gradient w.r.t. the embedding matrix.
void backward(const ModelParams& params, const ForwardTrace& trace, std::span<const int> ids,
              const OutputGrads& og, Grads& grads, Tensor* d_x);

std::vector<double> softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> v);

// ---------------------------------------------------------------- losses

enum class Mitigation : std::uint8_t { None, Reweight, Poe, AdvTrain, GradRev };
std::string_view to_string(Mitigation m);
Mitigation mitigation_from_string(std::string_view name);

struct Example {
  std::vector<int> ids;
  std::optional<std::size_t> target;
  int label = 0;
  double weight = 1.0;
  double p_b_true = 0.0;          // Reweight: bias-only confidence in the label
  std::vector<double> p_b;        // Poe: bias-only distribution
  std::vector<int> bias_members;  // GradRev: active coordinates of the bias head
  std::vector<int> adv_ids;       // AdvTrain: perturbed ids (same length)
};

struct LossSpec {
  Mitigation mitigation = Mitigation::None;
  double bpr_coef = 0.0;              // gamma_p; 0 disables the BPR term
  std::span<const double> pair_weights;  // batch x batch similarity, row-major
  double reversal_coef = 0.1;
  bool input_grads = false;
};

struct LossResult {
  // Objective whose gradient the encoder receives. For GradRev this is the
  // surrogate task_loss - reversal * bias_loss.
  double loss = 0.0;
  double task_loss = 0.0;
  double bias_loss = 0.0;
  double bpr_loss = 0.0;
  Grads grads;
  std::vector<Tensor> input_grads;  // per example, when requested
};

// Batch-mean loss composition and exact gradients. Throws NonFinite.
LossResult loss_and_backward(const ModelParams& params, std::span<const Example> batch, const LossSpec& spec);

double cross_entropy(std::span<const double> logits, int label);

// Central differences over a random fraction of all parameter entries;
// returns max |a - n| / max(|a|, |n|, 1e-8). Bias-head entries are checked
// against bias_loss, all others against loss.
double grad_check(const ModelParams& params, std::span<const Example> batch, const LossSpec& spec,
                  double eps = 1e-4, std::uint64_t seed = 0, double fraction = 0.05);

// ---------------------------------------------------------------- optimizer

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  long step = 0;
};

AdamState make_adam_state(const ModelParams& params);
void adam_step(ModelParams& params, const Grads& grads, AdamState& state, const AdamHyper& hyper);

// ---------------------------------------------------------------- helpers

// Class predicted by argmax (lowest index on ties).
int predict(const ModelParams& params, std::span<const int> ids, std::optional<std::size_t> target);

struct FitConfig {
  int epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

// Plain cross-entropy training with seeded shuffled minibatches.
void fit(ModelParams& params, std::span<const Example> examples, const FitConfig& cfg);

double accuracy(const ModelParams& params, std::span<const Example> examples);

// ---------------------------------------------------------------- checkpoint

void save_checkpoint(const ModelParams& params, const Vocabulary& vocab, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path, Vocabulary* vocab = nullptr);

}  // namespace codebias
