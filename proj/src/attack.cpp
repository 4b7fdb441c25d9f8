#include <algorithm>
#include <map>
#include <ostream>

#include "codebias/debias.hpp"
#include "codebias/errors.hpp"
#include "codebias/json_io.hpp"
#include "codebias/random.hpp"

namespace codebias {

std::vector<std::string> renameable_identifiers(const Sample& sample) {
  const Ast ast = parse(sample.tokens);
  std::set<std::string> names;
  const AstNode& fn = ast[ast.root];
  for (int c : fn.children) {
    if (ast[c].kind == NodeKind::Name) names.insert(node_label(ast, sample.tokens, c));
  }
  for (std::size_t n = 0; n < ast.nodes.size(); ++n) {
    if (ast.nodes[n].kind != NodeKind::VarDecl) continue;
    const int target = declaration_target(ast, static_cast<int>(n));
    if (target >= 0) names.insert(node_label(ast, sample.tokens, target));
  }
  return {names.begin(), names.end()};
}

std::vector<std::string> fresh_names(const Corpus& corpus, std::size_t count, std::uint64_t seed) {
  std::set<std::string> seen;
  for (const auto& s : corpus.samples) {
    for (const auto& t : s.tokens) seen.insert(t.text);
    for (const auto& span : identifier_spans(s.tokens)) seen.insert(span.text);
  }
  static constexpr std::string_view kCons = "bcdfghjklmnpqrstvwxz";
  static constexpr std::string_view kVow = "aeiouy";
  Rng rng(mix_seed(seed, 0xf4e5));
  auto word = [&] {
    for (;;) {
      std::string w;
      for (int i = 0; i < 5; ++i) {
        const auto& set = i % 2 == 0 ? kCons : kVow;
        w += set[static_cast<std::size_t>(rng.below(set.size()))];
      }
      if (!seen.count(w) && !is_keyword(w) && !is_api_name(w)) return w;
    }
  };
  std::vector<std::string> out;
  std::set<std::string> made;
  while (out.size() < count) {
    std::string name = word();
    if (out.size() % 2 == 1) {
      std::string second = word();
      second[0] = static_cast<char>(second[0] - 'a' + 'A');
      name += second;
    }
    if (made.insert(name).second && !seen.count(name)) out.push_back(name);
  }
  return out;
}

std::vector<std::string> name_pieces(const std::vector<std::string>& names) {
  std::vector<std::string> out;
  for (const auto& n : names) {
    for (auto& p : split_identifier(n)) out.push_back(std::move(p));
  }
  return out;
}

CandidatePool build_candidate_pool(const Corpus& corpus, const Vocabulary& vocab,
                                   const std::vector<std::string>& fresh, const AttackConfig& cfg) {
  std::map<std::string, std::set<std::string>> projects_of;
  for (const auto& s : corpus.samples) {
    for (const auto& name : renameable_identifiers(s)) projects_of[name].insert(s.project_id);
  }
  std::vector<std::string> names;
  for (const auto& [name, _] : projects_of) names.push_back(name);
  if (names.size() > cfg.pool_cap) {
    Rng rng(mix_seed(cfg.seed, 0x9001));
    rng.shuffle(names);
    names.resize(cfg.pool_cap);
    std::sort(names.begin(), names.end());
  }
  CandidatePool pool;
  auto add = [&](const std::string& name, std::set<std::string> projects) {
    CandidateName c;
    c.text = name;
    c.pieces = split_identifier(name);
    for (const auto& p : c.pieces) {
      if (!vocab.contains(p)) throw InvalidArgument("candidate piece '" + p + "' missing from the vocabulary");
      c.ids.push_back(vocab.id(p));
    }
    c.projects = std::move(projects);
    pool.names.push_back(std::move(c));
  };
  for (const auto& n : names) add(n, projects_of[n]);
  for (const auto& n : fresh) add(n, {});
  return pool;
}

namespace {

double example_loss(const ModelParams& params, std::span<const int> ids, std::optional<std::size_t> target,
                    int label) {
  return cross_entropy(forward(params, ids, target).logits, label);
}

}  // namespace

AdvSample bfs_attack(const ModelParams& params, const Vocabulary& vocab, const Sample& sample,
                     std::optional<std::size_t> target, int label, const CandidatePool& pool, std::size_t k) {
  if (k < 1) throw InvalidArgument("attack needs k >= 1");
  const auto renameable = renameable_identifiers(sample);
  if (renameable.empty()) throw NoRenameable("sample " + sample.sample_id + " has no user-defined identifiers");

  const auto spans = identifier_spans(sample.tokens);
  std::set<std::string> present;
  for (const auto& s : spans) present.insert(s.text);

  Example ex;
  ex.ids = vocab.encode(sample.tokens);
  ex.target = target;
  ex.label = label;
  LossSpec spec;
  spec.input_grads = true;
  const LossResult base = loss_and_backward(params, std::span<const Example>(&ex, 1), spec);
  const Tensor& g = base.input_grads.front();
  const std::size_t d = params.cfg.embed_dim;

  AdvSample best;
  best.sample_id = sample.sample_id;
  best.target = target;
  best.label = label;
  best.loss_before = base.task_loss;
  best.loss_after = -1.0;
  std::vector<int> best_ids;

  struct Scored {
    double score;
    std::size_t cand;
  };
  for (const auto& name : renameable) {
    std::vector<const IdentifierSpan*> occ;
    for (const auto& s : spans) {
      if (s.text == name) occ.push_back(&s);
    }
    if (occ.empty()) continue;
    const std::size_t pieces = occ.front()->last - occ.front()->first;
    // Gradient summed over occurrences, per piece position.
    std::vector<double> gsum(pieces * d, 0.0);
    for (const auto* s : occ) {
      for (std::size_t p = 0; p < pieces; ++p) {
        const double* row = g.row(s->first + p);
        for (std::size_t c = 0; c < d; ++c) gsum[p * d + c] += row[c];
      }
    }
    double old_term = 0.0;
    for (std::size_t p = 0; p < pieces; ++p) {
      const double* e = params.E.row(static_cast<std::size_t>(ex.ids[occ.front()->first + p]));
      for (std::size_t c = 0; c < d; ++c) old_term += gsum[p * d + c] * e[c];
    }
    std::vector<Scored> scored;
    for (std::size_t ci = 0; ci < pool.names.size(); ++ci) {
      const CandidateName& cand = pool.names[ci];
      if (cand.ids.size() != pieces || present.count(cand.text)) continue;
      if (!cand.projects.empty() && cand.projects.size() == 1 && cand.projects.count(sample.project_id)) continue;
      double s = -old_term;
      for (std::size_t p = 0; p < pieces; ++p) {
        const double* e = params.E.row(static_cast<std::size_t>(cand.ids[p]));
        for (std::size_t c = 0; c < d; ++c) s += gsum[p * d + c] * e[c];
      }
      scored.push_back({s, ci});
    }
    const std::size_t keep = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                      [](const Scored& a, const Scored& b) { return a.score > b.score || (a.score == b.score && a.cand < b.cand); });
    for (std::size_t r = 0; r < keep; ++r) {
      const CandidateName& cand = pool.names[scored[r].cand];
      std::vector<int> ids = ex.ids;
      for (const auto* s : occ) {
        for (std::size_t p = 0; p < pieces; ++p) ids[s->first + p] = cand.ids[p];
      }
      const double loss = example_loss(params, ids, target, label);
      if (loss > best.loss_after) {
        best.loss_after = loss;
        best.old_name = name;
        best.new_name = cand.text;
        best_ids = std::move(ids);
      }
    }
  }

  best.tokens = sample.tokens;
  if (best_ids.empty()) {
    // No candidate shares a piece count with any renameable name.
    best.ids = ex.ids;
    best.loss_after = best.loss_before;
    best.perturbed = false;
    return best;
  }
  const auto new_pieces = split_identifier(best.new_name);
  for (const auto& s : spans) {
    if (s.text != best.old_name) continue;
    for (std::size_t p = 0; p < new_pieces.size(); ++p) best.tokens[s.first + p].text = new_pieces[p];
  }
  reflow_spans(best.tokens, sample.tokens);
  best.ids = std::move(best_ids);
  best.perturbed = true;
  return best;
}

std::vector<AdvSample> build_adversarial_set(const ModelParams& params, const Vocabulary& vocab,
                                             const Corpus& corpus, std::span<const Item> items,
                                             const CandidatePool& pool, std::size_t k) {
  std::vector<AdvSample> out;
  out.reserve(items.size());
  for (const Item& item : items) {
    const Sample& s = corpus.samples.at(item.sample);
    AdvSample adv;
    try {
      adv = bfs_attack(params, vocab, s, item.target, item.label, pool, k);
    } catch (const NoRenameable&) {
      adv.sample_id = s.sample_id;
      adv.target = item.target;
      adv.label = item.label;
      adv.ids = vocab.encode(s.tokens);
      adv.loss_before = adv.loss_after = example_loss(params, adv.ids, item.target, item.label);
      adv.eligible = false;
    }
    if (adv.loss_after <= adv.loss_before) {
      adv.tokens = s.tokens;
      adv.ids = vocab.encode(s.tokens);
      adv.loss_after = adv.loss_before;
      adv.perturbed = false;
    }
    out.push_back(std::move(adv));
  }
  return out;
}

Sample apply_perturbation(const Sample& original, const AdvSample& adv, const std::set<std::string>& bias_vocab) {
  Sample s = original;
  if (!adv.perturbed) return s;
  if (adv.tokens.size() != original.tokens.size()) throw Misalignment("perturbed sample changed length");
  s.tokens = adv.tokens;
  s.bias_token_indices.clear();
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (is_identifier_piece(s.tokens[i]) && bias_vocab.count(s.tokens[i].text)) s.bias_token_indices.push_back(i);
  }
  return s;
}

void write_adversarial_set(const Corpus& corpus, std::span<const AdvSample> set, std::ostream& out) {
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : corpus.samples) by_id[s.sample_id] = &s;
  out << corpus_header(corpus).dump() << '\n';
  for (const auto& adv : set) {
    auto it = by_id.find(adv.sample_id);
    if (it == by_id.end()) throw InvalidArgument("adversarial sample " + adv.sample_id + " not in corpus");
    auto j = sample_to_json(apply_perturbation(*it->second, adv, corpus.bias_vocab));
    nlohmann::json p = {{"perturbed", adv.perturbed},
                        {"eligible", adv.eligible},
                        {"loss_before", adv.loss_before},
                        {"loss_after", adv.loss_after}};
    if (adv.target) p["target"] = *adv.target;
    if (adv.perturbed) {
      p["old_name"] = adv.old_name;
      p["new_name"] = adv.new_name;
    }
    j["perturbation"] = p;
    out << j.dump() << '\n';
  }
}

}  // namespace codebias
