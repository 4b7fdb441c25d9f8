// Independent reference implementations and random fixtures for tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "codebias/biasmetrics.hpp"
#include "codebias/corpus.hpp"
#include "codebias/lang.hpp"
#include "codebias/model.hpp"
#include "codebias/random.hpp"
#include "codebias/simbpr.hpp"

namespace oracle {

using namespace codebias;

inline Sample sample_from_source(const std::string& src, const std::string& project = "p0",
                                 Task task = Task::VulnDet) {
  Sample s;
  s.sample_id = project + "/s";
  s.project_id = project;
  s.tokens = tokenize(src);
  s.task = task;
  return s;
}

// Hop counts from every source by breadth-first search; -1 when unreachable.
inline std::vector<int> bfs_distances(const Cfg& cfg) {
  const std::size_t n = cfg.blocks.size();
  std::vector<std::vector<int>> out_edges(n);
  for (auto [u, v] : cfg.edges) out_edges[static_cast<std::size_t>(u)].push_back(v);
  std::vector<int> dist(n * n, -1);
  for (std::size_t s = 0; s < n; ++s) {
    std::deque<std::size_t> queue{s};
    dist[s * n + s] = 0;
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      for (int v : out_edges[u]) {
        auto& d = dist[s * n + static_cast<std::size_t>(v)];
        if (d >= 0) continue;
        d = dist[s * n + u] + 1;
        queue.push_back(static_cast<std::size_t>(v));
      }
    }
  }
  return dist;
}

inline Cfg random_cfg(Rng& rng, std::size_t max_blocks = 12) {
  Cfg cfg;
  const std::size_t n = 1 + rng.below(max_blocks);
  cfg.blocks.resize(n);
  for (auto& b : cfg.blocks) {
    const std::size_t stmts = rng.below(4);
    for (std::size_t i = 0; i < stmts; ++i) b.stmts.push_back({static_cast<StmtKind>(rng.below(kNumStmtKinds)), -1});
  }
  const double density = rng.uniform(0.05, 0.4);
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      if (rng.bernoulli(density)) cfg.edges.emplace_back(static_cast<int>(u), static_cast<int>(v));
    }
  }
  cfg.exit = static_cast<int>(n - 1);
  return cfg;
}

struct CondIdfOracle {
  double cond_p = 0.0;
  double idf = 0.0;
  double cond_idf = 0.0;
  std::size_t count = 0;
  std::size_t label_count = 0;
  std::size_t df = 0;
};

// Counts by scanning a flat occurrence list once per distinct word.
inline std::map<std::string, CondIdfOracle> brute_cond_idf(const Corpus& corpus, int label) {
  struct Occ {
    std::string word;
    int label;
    std::string project;
  };
  std::vector<Occ> occ;
  std::vector<std::string> projects;
  for (const Sample& s : corpus.samples) {
    projects.push_back(s.project_id);
    std::vector<int> labels;
    if (s.task == Task::VulnDet) {
      labels.push_back(s.vuln_label);
    } else {
      for (const auto& t : s.targets) labels.push_back(t.type_class);
    }
    for (int l : labels) {
      for (const Token& t : s.tokens) occ.push_back({t.text, l, s.project_id});
    }
  }
  std::sort(projects.begin(), projects.end());
  projects.erase(std::unique(projects.begin(), projects.end()), projects.end());
  std::vector<std::string> words;
  for (const auto& o : occ) words.push_back(o.word);
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());

  std::map<std::string, CondIdfOracle> out;
  for (const auto& w : words) {
    CondIdfOracle r;
    std::vector<std::string> seen;
    for (const auto& o : occ) {
      if (o.word != w) continue;
      ++r.count;
      if (o.label == label) ++r.label_count;
      seen.push_back(o.project);
    }
    std::sort(seen.begin(), seen.end());
    r.df = static_cast<std::size_t>(std::unique(seen.begin(), seen.end()) - seen.begin());
    r.cond_p = static_cast<double>(r.label_count) / static_cast<double>(r.count);
    r.idf = std::log(static_cast<double>(projects.size()) / static_cast<double>(r.df));
    r.cond_idf = r.cond_p * r.idf;
    out[w] = r;
  }
  return out;
}

inline Corpus random_counting_corpus(Rng& rng, std::size_t max_tokens = 10000) {
  Corpus c;
  c.task = Task::VulnDet;
  const std::size_t projects = 2 + rng.below(8);
  const std::size_t alphabet = 5 + rng.below(60);
  const std::size_t budget = 1 + rng.below(max_tokens);
  std::size_t used = 0;
  for (std::size_t i = 0; used < budget; ++i) {
    Sample s;
    s.sample_id = "s" + std::to_string(i);
    s.project_id = "p" + std::to_string(rng.below(projects));
    s.vuln_label = static_cast<int>(rng.below(2));
    const std::size_t len = std::min<std::size_t>(1 + rng.below(60), budget - used);
    for (std::size_t t = 0; t < len; ++t) {
      Token tok;
      tok.text = "w" + std::to_string(rng.below(alphabet));
      tok.kind = TokenKind::Identifier;
      s.tokens.push_back(tok);
    }
    used += len;
    c.samples.push_back(std::move(s));
  }
  return c;
}

inline ModelConfig small_config(Task task, Activation act = Activation::Tanh) {
  ModelConfig cfg;
  cfg.vocab_size = 24;
  cfg.embed_dim = 6;
  cfg.hidden_dim = 8;
  cfg.head_dim = 5;
  cfg.num_classes = task == Task::TypeInf ? 3 : 2;
  cfg.bias_dim = 4;
  cfg.task = task;
  cfg.activation = act;
  return cfg;
}

// The layer widths the experiments train, over a corpus-sized vocabulary.
inline ModelConfig default_config(Task task) {
  ModelConfig cfg = small_config(task);
  cfg.vocab_size = 400;
  cfg.embed_dim = 32;
  cfg.hidden_dim = 64;
  cfg.head_dim = 32;
  return cfg;
}

// Glorot weights plus nonzero biases so every parameter is exercised.
inline ModelParams random_params(const ModelConfig& cfg, std::uint64_t seed, double scale = 0.5) {
  ModelParams p = init_params(cfg, seed);
  Rng rng(mix_seed(seed, 77));
  for (Tensor* t : p.tensors()) {
    for (double& x : t->data) x += rng.uniform(-scale, scale);
  }
  return p;
}

inline std::vector<int> random_ids(Rng& rng, std::size_t vocab, std::size_t len) {
  std::vector<int> ids(len);
  for (auto& id : ids) id = static_cast<int>(2 + rng.below(vocab - 2));
  return ids;
}

inline std::vector<Example> random_batch(Rng& rng, const ModelConfig& cfg, std::size_t n) {
  std::vector<Example> batch(n);
  for (auto& ex : batch) {
    const std::size_t len = 2 + rng.below(7);
    ex.ids = random_ids(rng, cfg.vocab_size, len);
    if (cfg.task == Task::TypeInf) ex.target = rng.below(len);
    ex.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.num_classes)));
    ex.weight = rng.uniform(0.5, 1.5);
    ex.p_b_true = rng.uniform(0.0, 0.95);
    double z = 0.0;
    for (int k = 0; k < cfg.num_classes; ++k) {
      ex.p_b.push_back(rng.uniform(0.05, 1.0));
      z += ex.p_b.back();
    }
    for (double& p : ex.p_b) p /= z;
    for (std::size_t k = 0; k < cfg.bias_dim; ++k) {
      if (rng.bernoulli(0.4)) ex.bias_members.push_back(static_cast<int>(k));
    }
    ex.adv_ids = ex.ids;
    ex.adv_ids[rng.below(len)] = static_cast<int>(2 + rng.below(cfg.vocab_size - 2));
  }
  // Guarantee at least one same-label pair for the BPR term.
  batch[1].label = batch[0].label;
  return batch;
}

inline std::vector<double> random_pair_weights(Rng& rng, std::size_t n) {
  std::vector<double> w(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) w[i * n + j] = w[j * n + i] = rng.uniform(0.1, 1.0);
  }
  return w;
}

inline SimilarityMatrix matrix_of(std::size_t n, const std::vector<std::tuple<std::size_t, std::size_t, double>>& entries) {
  SimilarityMatrix m;
  m.n = n;
  m.values.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m.values[i * n + i] = 1.0;
  for (auto [i, j, v] : entries) m.values[i * n + j] = m.values[j * n + i] = v;
  return m;
}

// Greedy reference: pairs by descending similarity, ties by index.
inline std::vector<std::size_t> unshuffle_oracle(const SimilarityMatrix& m) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = i + 1; j < m.n; ++j) pairs.emplace_back(m.at(i, j), i, j);
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    return std::make_pair(std::get<1>(a), std::get<2>(a)) < std::make_pair(std::get<1>(b), std::get<2>(b));
  });
  std::vector<std::size_t> out;
  const auto add = [&](std::size_t k) {
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  };
  for (const auto& [v, i, j] : pairs) {
    if (v <= 0.0) break;
    add(i);
    add(j);
  }
  for (std::size_t k = 0; k < m.n; ++k) add(k);
  return out;
}

}  // namespace oracle
