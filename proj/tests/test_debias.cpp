#include <doctest.h>

#include <cmath>
#include <sstream>

#include "codebias/debias.hpp"
#include "codebias/errors.hpp"
#include "oracles.hpp"

using namespace codebias;

namespace {

double ce_of(const std::vector<double>& p, int y) { return -std::log(p[static_cast<std::size_t>(y)]); }

struct Toy {
  Sample sample;
  Vocabulary vocab;
  CandidatePool pool;
};

Toy make_toy() {
  Toy t;
  t.sample = oracle::sample_from_source("fn run(alpha) { var beta = alpha + 1; return beta; }");
  for (const auto& tok : t.sample.tokens) t.vocab.add(tok.text);
  for (const char* name : {"gamma", "delta", "omega", "twoPart"}) {
    CandidateName c;
    c.text = name;
    c.pieces = split_identifier(name);
    for (const auto& p : c.pieces) c.ids.push_back(t.vocab.add(p));
    t.pool.names.push_back(c);
  }
  return t;
}

double renamed_loss(const ModelParams& p, const Toy& t, const std::string& from, const std::string& to, int y) {
  std::vector<Token> toks = t.sample.tokens;
  for (auto& tok : toks) {
    if (tok.text == from) tok.text = to;
  }
  return cross_entropy(forward(p, t.vocab.encode(toks), std::nullopt).logits, y);
}

std::multiset<TokenKind> kinds(const std::vector<Token>& toks) {
  std::multiset<TokenKind> out;
  for (const auto& t : toks) out.insert(t.kind);
  return out;
}

}  // namespace

TEST_CASE("reweight_loss") {
  const std::vector<double> p = {0.5, 0.5};
  CHECK(reweight_loss(1.0, p, 0) == 0.0);
  CHECK(reweight_loss(0.0, p, 0) == doctest::Approx(std::log(2.0)));
  CHECK(reweight_loss(0.8, p, 1) == doctest::Approx(0.1386).epsilon(1e-3));
}

TEST_CASE("poe_loss") {
  const std::vector<double> pd = {0.7, 0.3};
  CHECK(poe_loss(std::vector<double>{0.5, 0.5}, pd, 0) == doctest::Approx(0.3567).epsilon(1e-3));
  const std::vector<double> pd3 = {0.2, 0.5, 0.3};
  const std::vector<double> uni(3, 1.0 / 3.0);
  for (int y = 0; y < 3; ++y) CHECK(poe_loss(uni, pd3, y) == doctest::Approx(ce_of(pd3, y)).epsilon(1e-12));
  // Renormalization: scaling p_b does not matter.
  const std::vector<double> pb = {0.1, 0.6, 0.3};
  const std::vector<double> pb_scaled = {0.05, 0.3, 0.15};
  CHECK(poe_loss(pb, pd3, 2) == doctest::Approx(poe_loss(pb_scaled, pd3, 2)).epsilon(1e-12));
  // One-hot bias prediction on the label drives the loss to zero.
  CHECK(poe_loss(std::vector<double>{0.0, 1.0, 0.0}, pd3, 1) < 1e-10);
}

TEST_CASE("adv_train_loss") {
  const auto cfg = oracle::small_config(Task::TypeInf);
  const ModelParams p = oracle::random_params(cfg, 1);
  const std::vector<int> ids = {2, 5, 7, 3}, adv = {2, 9, 7, 3};
  const auto ce = [&](const std::vector<int>& x) { return cross_entropy(forward(p, x, std::size_t{1}).logits, 2); };
  CHECK(adv_train_loss(p, ids, ids, std::size_t{1}, 2) == 2.0 * ce(ids));
  CHECK(std::abs(adv_train_loss(p, ids, adv, std::size_t{1}, 2) - (ce(ids) + ce(adv))) <= 1e-12);
  ModelParams z = p;
  for (Tensor* t : z.tensors()) std::fill(t->data.begin(), t->data.end(), 0.0);
  CHECK(std::abs(adv_train_loss(z, ids, adv, std::size_t{1}, 0) - 2.0 * std::log(3.0)) <= 1e-9);
}

TEST_CASE("grad_reversal_loss") {
  const auto cfg = oracle::small_config(Task::VulnDet);
  const ModelParams p = oracle::random_params(cfg, 2);
  Example ex;
  ex.ids = {2, 4, 6, 8};
  ex.label = 1;
  ex.bias_members = {0, 2};

  LossSpec plain;
  const LossResult ce = loss_and_backward(p, std::span<const Example>(&ex, 1), plain);
  const GradRevValue off = grad_reversal_loss(p, ex, 0.0);
  const GradRevValue on = grad_reversal_loss(p, ex, 1.0);
  CHECK(off.task_ce == doctest::Approx(ce.task_loss).epsilon(1e-15));
  for (std::size_t i = 0; i < 3; ++i) {  // encoder tensors: E, W1, b1
    const Tensor& a = *off.grads.tensors()[i];
    const Tensor& b = *ce.grads.tensors()[i];
    for (std::size_t e = 0; e < a.size(); ++e) CHECK(std::abs(a.data[e] - b.data[e]) <= 1e-12);
  }
  // Reversal pushes the encoder against the bias-loss gradient.
  double dot = 0.0;
  const GradRevValue mid = grad_reversal_loss(p, ex, 0.3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t e = 0; e < off.grads.tensors()[i]->size(); ++e) {
      const double bias_grad = off.grads.tensors()[i]->data[e] - on.grads.tensors()[i]->data[e];
      dot += (mid.grads.tensors()[i]->data[e] - off.grads.tensors()[i]->data[e]) * bias_grad;
    }
  }
  CHECK(dot <= 0.0);
  // The bias head itself is trained on the unreversed loss.
  CHECK(on.grads.W_b == off.grads.W_b);

  ModelParams zhead = p;
  std::fill(zhead.W_b.data.begin(), zhead.W_b.data.end(), 0.0);
  std::fill(zhead.b_b.data.begin(), zhead.b_b.data.end(), 0.0);
  ex.bias_members.clear();
  CHECK(grad_reversal_loss(zhead, ex, 0.1).bias_loss == doctest::Approx(std::log(2.0)).epsilon(1e-14));

  // Finite differences on the surrogate task_ce - mu * bias_loss.
  Rng rng(3);
  const auto batch = oracle::random_batch(rng, cfg, 4);
  LossSpec spec;
  spec.mitigation = Mitigation::GradRev;
  spec.reversal_coef = 0.1;
  CHECK(grad_check(p, batch, spec, 1e-4, 4, 0.5) < 1e-4);
}

TEST_CASE("bias-only model: masking and accuracy") {
  for (double strength : {1.0, 0.0}) {
    GenConfig g;
    g.task = Task::VulnDet;
    g.num_projects = 20;
    g.samples_per_project = 200;
    g.bias_strength = strength;
    const Corpus c = generate_corpus(g);
    const SplitSpec split = split_projects(c, g.split_seed);
    const SampleSplit parts = assign_samples(c, split);
    const Vocabulary vocab = build_vocabulary(c);
    const auto train = items_of(c, parts.train);
    const auto test = items_of(c, parts.iid_test);
    ModelConfig mc = oracle::small_config(Task::VulnDet);
    mc.vocab_size = vocab.size();
    mc.embed_dim = 16;
    mc.hidden_dim = 16;
    FitConfig fc;
    fc.epochs = 15;
    fc.lr = 5e-3;
    const BiasOnlyModel bo = train_bias_only(c, train, vocab, mc, fc);
    std::size_t ok = 0;
    for (const Item& it : test) {
      const auto pr = bo.probs(c.samples[it.sample], it.target, vocab);
      ok += (pr[1] > pr[0] ? 1 : 0) == it.label;
    }
    const double acc = static_cast<double>(ok) / static_cast<double>(test.size());
    CAPTURE(strength);
    if (strength == 1.0) {
      CHECK(acc >= 0.9);
    } else {
      CHECK(std::abs(acc - 0.5) <= 0.05);
    }

    const Sample& s = c.samples[train.front().sample];
    const auto ids = bias_only_ids(s, std::nullopt, vocab);
    const auto full = vocab.encode(s.tokens);
    const auto keep = bias_only_positions(s, std::nullopt);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const bool kept = std::find(keep.begin(), keep.end(), i) != keep.end();
      CHECK(ids[i] == (kept ? full[i] : Vocabulary::kMask));
    }
    for (std::size_t b : s.bias_token_indices) CHECK(std::find(keep.begin(), keep.end(), b) != keep.end());
  }
}

TEST_CASE("bfs_attack: exhaustive oracle on a toy") {
  Toy t = make_toy();
  ModelConfig cfg = oracle::small_config(Task::VulnDet);
  cfg.vocab_size = t.vocab.size();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams p = oracle::random_params(cfg, seed, 1.0);
    for (int y = 0; y < 2; ++y) {
      const AdvSample a = bfs_attack(p, t.vocab, t.sample, std::nullopt, y, t.pool, t.pool.names.size());
      double best = -1.0;
      for (const auto& from : renameable_identifiers(t.sample)) {
        for (const auto& cand : t.pool.names) {
          if (cand.pieces.size() != split_identifier(from).size()) continue;
          best = std::max(best, renamed_loss(p, t, from, cand.text, y));
        }
      }
      CHECK(a.loss_after == doctest::Approx(best).epsilon(1e-12));
      CHECK(a.perturbed);
      CHECK(a.loss_before == doctest::Approx(cross_entropy(forward(p, t.vocab.encode(t.sample.tokens), std::nullopt).logits, y)));
      CHECK(a.ids == t.vocab.encode(a.tokens));
      // Only one identifier changes and token kinds are preserved.
      CHECK(kinds(a.tokens) == kinds(t.sample.tokens));
      std::set<std::string> changed;
      for (std::size_t i = 0; i < a.tokens.size(); ++i) {
        if (a.tokens[i].text != t.sample.tokens[i].text) changed.insert(t.sample.tokens[i].text);
      }
      CHECK(changed == std::set<std::string>{a.old_name});
      CHECK(renamed_loss(p, t, a.old_name, a.new_name, y) == doctest::Approx(a.loss_after).epsilon(1e-12));
    }
  }
}

TEST_CASE("bfs_attack: insensitive model and errors") {
  Toy t = make_toy();
  ModelConfig cfg = oracle::small_config(Task::VulnDet);
  cfg.vocab_size = t.vocab.size();
  ModelParams p = oracle::random_params(cfg, 1);
  std::fill(p.W1.data.begin(), p.W1.data.end(), 0.0);
  const AdvSample a = bfs_attack(p, t.vocab, t.sample, std::nullopt, 0, t.pool, 3);
  CHECK(a.loss_after == a.loss_before);

  CHECK(renameable_identifiers(t.sample) == std::vector<std::string>{"alpha", "beta", "run"});
  CHECK_THROWS_AS(bfs_attack(p, t.vocab, t.sample, std::nullopt, 0, t.pool, 0), InvalidArgument);

  const std::vector<Item> no_items;
  Corpus c;
  CHECK(build_adversarial_set(p, t.vocab, c, no_items, t.pool).empty());
}

TEST_CASE("build_adversarial_set: consistency on a generated corpus") {
  GenConfig g;
  g.task = Task::TypeInf;
  g.num_projects = 5;
  g.samples_per_project = 12;
  const Corpus c = generate_corpus(g);
  AttackConfig ac;
  const auto fresh = fresh_names(c, ac.fresh, 0);
  const Vocabulary vocab = build_vocabulary(c, name_pieces(fresh));
  const CandidatePool pool = build_candidate_pool(c, vocab, fresh, ac);
  ModelConfig cfg = oracle::small_config(Task::TypeInf);
  cfg.vocab_size = vocab.size();
  const ModelParams p = oracle::random_params(cfg, 3, 1.0);
  std::vector<std::size_t> idx(c.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto items = items_of(c, idx);
  const auto adv = build_adversarial_set(p, vocab, c, items, pool, 4);
  REQUIRE(adv.size() == items.size());
  std::size_t improved = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const auto& a = adv[i];
    const Sample& s = c.samples[items[i].sample];
    CHECK(a.sample_id == s.sample_id);
    CHECK(a.tokens.size() == s.tokens.size());
    CHECK(kinds(a.tokens) == kinds(s.tokens));
    CHECK(a.ids == vocab.encode(a.tokens));
    if (a.perturbed) improved += a.loss_after > a.loss_before;
  }
  CHECK(improved > 0);

  std::ostringstream out;
  write_adversarial_set(c, adv, out);
  CHECK(out.str().find("perturbation") != std::string::npos);
}
