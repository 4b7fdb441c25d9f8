#include "codebias/debias.hpp"

#include <algorithm>
#include <cmath>

#include "codebias/errors.hpp"

namespace codebias {

Example make_example(const Corpus& corpus, const Vocabulary& vocab, const Item& item) {
  Example ex;
  ex.ids = vocab.encode(corpus.samples.at(item.sample).tokens);
  ex.target = item.target;
  ex.label = item.label;
  return ex;
}

std::vector<int> bias_members(const Sample& sample, const std::vector<std::string>& bias_words) {
  std::vector<int> out;
  for (const auto& t : sample.tokens) {
    auto it = std::lower_bound(bias_words.begin(), bias_words.end(), t.text);
    if (it != bias_words.end() && *it == t.text) out.push_back(static_cast<int>(it - bias_words.begin()));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::size_t> bias_only_positions(const Sample& sample, std::optional<std::size_t> target) {
  if (sample.task == Task::VulnDet) return sample.bias_token_indices;
  if (!target) throw InvalidArgument("TypeInf masking needs a target");
  const auto spans = identifier_spans(sample.tokens);
  std::string name;
  for (const auto& s : spans) {
    if (s.first <= *target && *target < s.last) name = s.text;
  }
  std::vector<std::size_t> pos;
  if (name.empty()) {
    pos.push_back(*target);
    return pos;
  }
  for (const auto& s : spans) {
    if (s.text != name) continue;
    for (std::size_t t = s.first; t < s.last; ++t) pos.push_back(t);
  }
  return pos;
}

std::vector<int> bias_only_ids(const Sample& sample, std::optional<std::size_t> target, const Vocabulary& vocab) {
  std::vector<int> ids(sample.tokens.size(), Vocabulary::kMask);
  for (std::size_t p : bias_only_positions(sample, target)) ids[p] = vocab.id(sample.tokens[p].text);
  return ids;
}

std::vector<double> BiasOnlyModel::probs(const Sample& sample, std::optional<std::size_t> target,
                                         const Vocabulary& vocab) const {
  return forward(params, bias_only_ids(sample, target, vocab), target).probs;
}

BiasOnlyModel train_bias_only(const Corpus& corpus, std::span<const Item> items, const Vocabulary& vocab,
                              const ModelConfig& model_cfg, const FitConfig& fit_cfg) {
  if (corpus.bias_vocab.empty()) throw ConfigError("bias-only model needs a nonempty bias vocabulary");
  std::vector<Example> examples;
  bool any_visible = false;
  for (const Item& item : items) {
    const Sample& s = corpus.samples.at(item.sample);
    Example ex;
    ex.ids = bias_only_ids(s, item.target, vocab);
    ex.target = item.target;
    ex.label = item.label;
    any_visible = any_visible || std::any_of(ex.ids.begin(), ex.ids.end(), [](int id) { return id != Vocabulary::kMask; });
    examples.push_back(std::move(ex));
  }
  if (!any_visible) throw ConfigError("bias masking leaves no visible token in any sample");
  BiasOnlyModel m;
  m.rule = corpus.task == Task::VulnDet ? "keep planted user-defined name pieces" : "keep target identifier pieces";
  m.params = init_params(model_cfg, fit_cfg.seed);
  fit(m.params, examples, fit_cfg);
  return m;
}

namespace {

constexpr double kFloor = 1e-12;

void check_label(std::span<const double> p, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= p.size()) throw UnknownLabel("label " + std::to_string(y));
}

}  // namespace

double reweight_loss(double p_b_true, std::span<const double> p_d, int y) {
  check_label(p_d, y);
  if (!(p_b_true >= 0.0 && p_b_true <= 1.0)) throw InvalidArgument("p_b_true must lie in [0,1]");
  return -(1.0 - p_b_true) * std::log(std::max(p_d[static_cast<std::size_t>(y)], kFloor));
}

double poe_loss(std::span<const double> p_b, std::span<const double> p_d, int y) {
  check_label(p_d, y);
  if (p_b.size() != p_d.size()) throw InvalidArgument("distributions differ in size");
  std::vector<double> logit(p_d.size());
  for (std::size_t k = 0; k < p_d.size(); ++k) {
    logit[k] = std::log(std::max(p_d[k], kFloor)) + std::log(std::max(p_b[k], kFloor));
  }
  return cross_entropy(logit, y);
}

double adv_train_loss(const ModelParams& params, std::span<const int> ids, std::span<const int> adv_ids,
                      std::optional<std::size_t> target, int y) {
  return cross_entropy(forward(params, ids, target).logits, y) + cross_entropy(forward(params, adv_ids, target).logits, y);
}

GradRevValue grad_reversal_loss(const ModelParams& params, const Example& example, double mu) {
  LossSpec spec;
  spec.mitigation = Mitigation::GradRev;
  spec.reversal_coef = mu;
  LossResult r = loss_and_backward(params, std::span<const Example>(&example, 1), spec);
  return {r.task_loss, r.bias_loss, std::move(r.grads)};
}

}  // namespace codebias
