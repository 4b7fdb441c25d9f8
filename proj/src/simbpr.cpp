#include "codebias/simbpr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <json.hpp>

#include "codebias/errors.hpp"

namespace codebias {

std::string_view to_string(EmbedMode mode) { return mode == EmbedMode::AstBow ? "AstBow" : "CfgPaths"; }

EmbedMode embed_mode_from_string(std::string_view name) {
  if (name == "AstBow") return EmbedMode::AstBow;
  if (name == "CfgPaths") return EmbedMode::CfgPaths;
  throw ConfigError("unknown embedding mode '" + std::string(name) + "'");
}

LogicEmbedding mu_ast(const Sample& sample, std::size_t target_token) {
  if (target_token >= sample.tokens.size()) throw NotADeclaration("target token out of range");
  const Ast ast = parse(sample.tokens);
  const int name = name_node_at(ast, target_token);
  if (name < 0) throw NotADeclaration("token " + std::to_string(target_token) + " is not inside a name");
  auto bag = ast_one_hop(ast, sample.tokens, name);
  LogicEmbedding e;
  e.mode = EmbedMode::AstBow;
  for (const auto& [word, count] : bag) e.bow[word] += count;
  // Literal siblings are counted by kind, not by value.
  for (int sib : ast[ast[name].parent].children) {
    const AstNode& n = ast[sib];
    if (n.kind != NodeKind::Literal) continue;
    const std::string text = node_label(ast, sample.tokens, sib);
    if (--e.bow[text] <= 0) e.bow.erase(text);
    e.bow[std::string(to_string(sample.tokens[n.tok_begin].kind))] += 1.0;
  }
  return e;
}

std::vector<int> Apsp::path(std::size_t u, std::size_t v) const {
  std::vector<int> p;
  if (distance(u, v) < 0) return p;
  p.push_back(static_cast<int>(u));
  std::size_t cur = u;
  while (cur != v) {
    cur = static_cast<std::size_t>(next[cur * n + v]);
    p.push_back(static_cast<int>(cur));
  }
  return p;
}

Apsp floyd_warshall(const Cfg& cfg) {
  Apsp a;
  a.n = cfg.blocks.size();
  const std::size_t n = a.n;
  constexpr int kInf = -1;
  a.dist.assign(n * n, kInf);
  a.next.assign(n * n, -1);
  std::vector<std::vector<char>> adj(n, std::vector<char>(n, 0));
  for (std::size_t v = 0; v < n; ++v) a.dist[v * n + v] = 0;
  for (auto [u, v] : cfg.edges) {
    const auto su = static_cast<std::size_t>(u);
    const auto sv = static_cast<std::size_t>(v);
    adj[su][sv] = 1;
    if (su != sv) a.dist[su * n + sv] = 1;
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const int ik = a.dist[i * n + k];
      if (ik < 0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        const int kj = a.dist[k * n + j];
        if (kj < 0) continue;
        int& ij = a.dist[i * n + j];
        if (ij < 0 || ik + kj < ij) ij = ik + kj;
      }
    }
  }
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      const int d = a.dist[u * n + v];
      if (u == v || d < 0) continue;
      for (std::size_t w = 0; w < n; ++w) {
        if (adj[u][w] && a.dist[w * n + v] == d - 1) {
          a.next[u * n + v] = static_cast<int>(w);
          break;
        }
      }
    }
  }
  return a;
}

LogicEmbedding mu_cfg(const Cfg& cfg) {
  LogicEmbedding e;
  e.mode = EmbedMode::CfgPaths;
  const Apsp apsp = floyd_warshall(cfg);
  const std::size_t n = apsp.n;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = 0; v < n; ++v) {
      if (u == v || apsp.distance(u, v) < 0) continue;
      PathVector pv{};
      for (int b : apsp.path(u, v)) {
        for (const auto& s : cfg.blocks[static_cast<std::size_t>(b)].stmts) pv[static_cast<std::size_t>(s.kind)] += 1.0;
      }
      double norm = 0.0;
      for (double x : pv) norm += x * x;
      if (norm == 0.0) continue;
      norm = std::sqrt(norm);
      for (double& x : pv) x /= norm;
      e.paths.push_back(pv);
    }
  }
  return e;
}

LogicEmbedding mu_cfg(const Sample& sample) {
  const Ast ast = parse(sample.tokens);
  return mu_cfg(build_cfg(ast, sample.tokens));
}

namespace {

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }

double bow_cosine(const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [k, v] : a) {
    na += v * v;
    auto it = b.find(k);
    if (it != b.end()) dot += v * it->second;
  }
  for (const auto& [k, v] : b) nb += v * v;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double path_score(const std::vector<PathVector>& a, const std::vector<PathVector>& b) {
  if (a.empty() || b.empty()) return 0.0;
  double total = 0.0;
  for (const auto& pa : a) {
    double best = -1.0;
    for (const auto& pb : b) {
      double dot = 0.0;
      for (std::size_t k = 0; k < kNumStmtKinds; ++k) dot += pa[k] * pb[k];
      best = std::max(best, dot);
    }
    total += best;
  }
  return total / static_cast<double>(a.size());
}

std::string embedding_key(const LogicEmbedding& e) {
  std::string key;
  if (e.mode == EmbedMode::AstBow) {
    for (const auto& [k, v] : e.bow) {
      key += k;
      key.push_back('\0');
      key.append(reinterpret_cast<const char*>(&v), sizeof v);
    }
  } else {
    for (const auto& p : e.paths) key.append(reinterpret_cast<const char*>(p.data()), sizeof(double) * p.size());
  }
  return key;
}

}  // namespace

double kappa(const LogicEmbedding& a, const LogicEmbedding& b) {
  if (a.mode != b.mode) throw ModeMismatch("kappa of embeddings with different modes");
  if (a.mode == EmbedMode::AstBow) return clamp01(bow_cosine(a.bow, b.bow));
  return clamp01(path_score(a.paths, b.paths));
}

SimilarityMatrix similarity_matrix(std::span<const LogicEmbedding> embeddings) {
  SimilarityMatrix m;
  m.n = embeddings.size();
  if (m.n > 0) m.mode = embeddings[0].mode;
  for (const auto& e : embeddings) {
    if (e.mode != m.mode) throw ModeMismatch("mixed embedding modes");
  }
  const std::size_t n = m.n;
  m.values.assign(n * n, 0.0);
  m.pairs_filled = n * (n - (n > 0 ? 1 : 0)) / 2;

  // Score each distinct embedding pair once.
  std::unordered_map<std::string, std::size_t> group_of_key;
  std::vector<std::size_t> group(n);
  std::vector<std::size_t> representative;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = group_of_key.try_emplace(embedding_key(embeddings[i]), representative.size());
    if (inserted) representative.push_back(i);
    group[i] = it->second;
  }
  const std::size_t g = representative.size();
  std::vector<double> gs(g * g, 0.0);
  for (std::size_t a = 0; a < g; ++a) {
    const auto& ea = embeddings[representative[a]];
    for (std::size_t b = a; b < g; ++b) {
      const auto& eb = embeddings[representative[b]];
      double v;
      if (m.mode == EmbedMode::CfgPaths && a != b) {
        v = std::max(kappa(ea, eb), kappa(eb, ea));
        m.kappa_evaluations += 2;
      } else {
        v = kappa(ea, eb);
        m.kappa_evaluations += 1;
      }
      gs[a * g + b] = gs[b * g + a] = v;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) m.values[i * n + j] = gs[group[i] * g + group[j]];
  }
  return m;
}

std::vector<LogicEmbedding> embed_items(const Corpus& corpus, std::span<const Item> items, EmbedMode mode) {
  std::vector<LogicEmbedding> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    const Sample& s = corpus.samples.at(it.sample);
    if (mode == EmbedMode::AstBow) {
      if (!it.target) throw NotADeclaration("AstBow embedding needs a target token");
      out.push_back(mu_ast(s, *it.target));
    } else {
      out.push_back(mu_cfg(s));
    }
  }
  return out;
}

std::vector<std::size_t> unshuffle(const SimilarityMatrix& matrix) {
  const std::size_t n = matrix.n;
  struct Pair {
    double v;
    std::uint32_t i, j;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = matrix.at(i, j);
      if (v > 0.0) pairs.push_back({v, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j)});
    }
  }
  // Pairs are generated in (i, j) order, so a stable sort keeps that tie order.
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.v > b.v; });
  std::vector<char> seen(n, 0);
  std::vector<std::size_t> order;
  order.reserve(n);
  auto visit = [&](std::size_t k) {
    if (!seen[k]) {
      seen[k] = 1;
      order.push_back(k);
    }
  };
  for (const auto& p : pairs) {
    if (order.size() == n) break;
    visit(p.i);
    visit(p.j);
  }
  for (std::size_t k = 0; k < n; ++k) visit(k);
  return order;
}

std::vector<std::vector<std::size_t>> batchify(std::span<const std::size_t> ordering, std::size_t batch_size) {
  if (batch_size < 2) throw InvalidArgument("batch size must be >= 2");
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < ordering.size(); s += batch_size) {
    const std::size_t e = std::min(ordering.size(), s + batch_size);
    batches.emplace_back(ordering.begin() + static_cast<std::ptrdiff_t>(s),
                         ordering.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return batches;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine of vectors with different lengths");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

BprValue bpr_loss_grad(std::span<const std::vector<double>> reprs, std::span<const int> labels,
                       std::span<const double> weights) {
  const std::size_t n = reprs.size();
  if (labels.size() != n || weights.size() != n * n) throw InvalidArgument("bpr inputs have inconsistent sizes");
  BprValue out;
  out.d_reprs.resize(n);
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.d_reprs[i].assign(reprs[i].size(), 0.0);
    double s = 0.0;
    for (double x : reprs[i]) s += x * x;
    norms[i] = std::sqrt(s);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (labels[i] != labels[j]) continue;
      ++out.pairs;
      const double w = weights[i * n + j];
      if (w == 0.0 || norms[i] == 0.0 || norms[j] == 0.0) {
        if (norms[i] == 0.0 || norms[j] == 0.0) total += w;
        continue;
      }
      const auto& a = reprs[i];
      const auto& b = reprs[j];
      double dot = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) dot += a[k] * b[k];
      const double nn = norms[i] * norms[j];
      const double c = dot / nn;
      total += w * (1.0 - c);
      auto& ga = out.d_reprs[i];
      auto& gb = out.d_reprs[j];
      const double ia2 = 1.0 / (norms[i] * norms[i]);
      const double ib2 = 1.0 / (norms[j] * norms[j]);
      for (std::size_t k = 0; k < a.size(); ++k) {
        ga[k] -= w * (b[k] / nn - c * a[k] * ia2);
        gb[k] -= w * (a[k] / nn - c * b[k] * ib2);
      }
    }
  }
  if (out.pairs == 0) return out;
  const double inv = 1.0 / static_cast<double>(out.pairs);
  out.loss = total * inv;
  for (auto& g : out.d_reprs) {
    for (double& x : g) x *= inv;
  }
  return out;
}

double bpr_loss(std::span<const std::vector<double>> reprs, std::span<const int> labels,
                std::span<const double> weights) {
  return bpr_loss_grad(reprs, labels, weights).loss;
}

double gamma_p(double progress) {
  if (!(progress >= 0.0 && progress <= 1.0)) throw InvalidArgument("training progress must lie in [0, 1]");
  return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
}

// ---------------------------------------------------------------- file format

namespace {

std::uint64_t fnv1a(const std::vector<double>& values) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace

void save_similarity(const SimilarityMatrix& matrix, const std::filesystem::path& path) {
  std::vector<double> tri;
  tri.reserve(matrix.n * (matrix.n + 1) / 2);
  for (std::size_t i = 0; i < matrix.n; ++i) {
    for (std::size_t j = i; j < matrix.n; ++j) tri.push_back(matrix.at(i, j));
  }
  nlohmann::json header = {{"mode", to_string(matrix.mode)}, {"n", matrix.n}, {"checksum", hex64(fnv1a(tri))}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(tri.data()), static_cast<std::streamsize>(tri.size() * sizeof(double)));
  if (!out) throw IoError("write failed for " + path.string());
}

SimilarityMatrix load_similarity(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(1, "missing similarity header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(1, e.what());
  }
  SimilarityMatrix m;
  try {
    m.mode = embed_mode_from_string(header.at("mode").get<std::string>());
    m.n = header.at("n").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(1, e.what());
  }
  const std::size_t count = m.n * (m.n + 1) / 2;
  std::vector<double> tri(count);
  in.read(reinterpret_cast<char*>(tri.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double)) throw FormatError(2, "truncated matrix payload");
  if (hex64(fnv1a(tri)) != header.value("checksum", "")) throw FormatError(2, "checksum mismatch");
  m.values.assign(m.n * m.n, 0.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < m.n; ++i) {
    for (std::size_t j = i; j < m.n; ++j, ++k) m.values[i * m.n + j] = m.values[j * m.n + i] = tri[k];
  }
  m.pairs_filled = m.n * (m.n - (m.n > 0 ? 1 : 0)) / 2;
  return m;
}

}  // namespace codebias
