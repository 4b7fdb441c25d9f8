#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "codebias/errors.hpp"
#include "codebias/simbpr.hpp"
#include "oracles.hpp"

using namespace codebias;

namespace {

LogicEmbedding decl_embedding(const std::string& decl) {
  const Sample s = oracle::sample_from_source("fn f(){ " + decl + " }", "p", Task::TypeInf);
  return mu_ast(s, 6);  // fn f ( ) { var <name>
}

}  // namespace

TEST_CASE("mu_ast: one-hop bag with literal kinds") {
  const LogicEmbedding e = decl_embedding("var x = 0;");
  CHECK(e.mode == EmbedMode::AstBow);
  CHECK(e.bow == std::map<std::string, double>{{"var", 1}, {"=", 1}, {"NumberLit", 1}, {";", 1}});
  CHECK(decl_embedding("var fooBar = 1;") == decl_embedding("var x = 7;"));
  CHECK_FALSE(decl_embedding("var s = \"a\";") == decl_embedding("var n = 0;"));
  const Sample s = oracle::sample_from_source("fn f(a){ g(a); }", "p", Task::TypeInf);
  CHECK_THROWS_AS(mu_ast(s, 5), NotADeclaration);
  CHECK_THROWS_AS(mu_ast(s, 99), NotADeclaration);
}

TEST_CASE("floyd_warshall: hand cases") {
  Cfg chain;
  chain.blocks.resize(3);
  chain.edges = {{0, 1}, {1, 2}, {0, 2}};
  const Apsp a = floyd_warshall(chain);
  for (std::size_t v = 0; v < 3; ++v) CHECK(a.distance(v, v) == 0);
  CHECK(a.distance(0, 2) == 1);
  CHECK(a.distance(2, 0) == -1);
  CHECK(a.path(0, 2) == std::vector<int>{0, 2});
  CHECK(a.path(2, 0).empty());

  // Two shortest routes 0->1->3 and 0->2->3: the lower block wins.
  Cfg diamond;
  diamond.blocks.resize(4);
  diamond.edges = {{0, 2}, {0, 1}, {2, 3}, {1, 3}};
  CHECK(floyd_warshall(diamond).path(0, 3) == std::vector<int>{0, 1, 3});
}

TEST_CASE("floyd_warshall: BFS oracle, triangle inequality, paths") {
  Rng rng(1);
  for (int rep = 0; rep < 100; ++rep) {
    const Cfg cfg = oracle::random_cfg(rng);
    const Apsp a = floyd_warshall(cfg);
    CHECK(a.dist == oracle::bfs_distances(cfg));
    const std::size_t n = a.n;
    std::set<std::pair<int, int>> edges(cfg.edges.begin(), cfg.edges.end());
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = 0; v < n; ++v) {
        const int uv = a.distance(u, v);
        for (std::size_t w = 0; w < n; ++w) {
          if (uv >= 0 && a.distance(v, w) >= 0) {
            CHECK(a.distance(u, w) >= 0);
            CHECK(a.distance(u, w) <= uv + a.distance(v, w));
          }
        }
        if (uv < 0) continue;
        const auto p = a.path(u, v);
        REQUIRE(p.size() == static_cast<std::size_t>(uv) + 1);
        CHECK(p.front() == static_cast<int>(u));
        CHECK(p.back() == static_cast<int>(v));
        for (std::size_t k = 0; k + 1 < p.size(); ++k) CHECK(edges.count({p[k], p[k + 1]}));
      }
    }
  }
}

TEST_CASE("mu_cfg: straight line, diamond, identifier invariance") {
  CHECK(mu_cfg(oracle::sample_from_source("fn f(a){ g(a); return a; }")).paths.empty());

  const LogicEmbedding d = mu_cfg(oracle::sample_from_source("fn f(a){ if (a) { g(a); } else { h(a); } return a; }"));
  // Reachable ordered pairs of the diamond: 0-1, 0-2, 0-3, 1-3, 2-3.
  REQUIRE(d.paths.size() == 5);
  PathVector via_then{};
  via_then[static_cast<std::size_t>(StmtKind::IfCond)] = 1.0 / std::sqrt(3.0);
  via_then[static_cast<std::size_t>(StmtKind::Call)] = 1.0 / std::sqrt(3.0);
  via_then[static_cast<std::size_t>(StmtKind::Return)] = 1.0 / std::sqrt(3.0);
  CHECK(std::find(d.paths.begin(), d.paths.end(), via_then) != d.paths.end());
  for (const auto& p : d.paths) {
    double n2 = 0.0;
    for (double x : p) n2 += x * x;
    CHECK(n2 == doctest::Approx(1.0).epsilon(1e-14));
  }

  const auto a = mu_cfg(oracle::sample_from_source("fn f(n){ var p = malloc(n); while (n) { n = n - 1; } free(p); }"));
  const auto b = mu_cfg(oracle::sample_from_source("fn g(k){ var q = malloc(k); while (k) { k = k - 1; } free(q); }"));
  CHECK(a == b);
}

TEST_CASE("kappa: hand values and range") {
  LogicEmbedding x, y;
  x.bow = {{"a", 1}, {"b", 1}};
  y.bow = {{"a", 1}, {"c", 1}};
  CHECK(kappa(x, x) == doctest::Approx(1.0));
  CHECK(kappa(x, y) == doctest::Approx(0.5));
  LogicEmbedding empty;
  CHECK(kappa(x, empty) == 0.0);

  LogicEmbedding p, q;
  p.mode = q.mode = EmbedMode::CfgPaths;
  PathVector e0{}, e1{}, e2{};
  e0[0] = 1.0;
  e1[1] = 1.0;
  e2[2] = 1.0;
  p.paths = {e0, e1};
  q.paths = {e1, e2, e0};
  CHECK(kappa(p, q) == 1.0);
  CHECK(kappa(q, p) == doctest::Approx(2.0 / 3.0));
  LogicEmbedding none;
  none.mode = EmbedMode::CfgPaths;
  CHECK(kappa(p, none) == 0.0);
  CHECK_THROWS_AS(kappa(p, x), ModeMismatch);
}

TEST_CASE("similarity_matrix: oracle and counts") {
  const auto a = decl_embedding("var x = 0;");
  std::vector<LogicEmbedding> two = {a, a};
  const auto m2 = similarity_matrix(two);
  CHECK(m2.values == std::vector<double>(4, 1.0));
  CHECK(m2.pairs_filled == 1);

  std::vector<LogicEmbedding> bows = {decl_embedding("var x = 0;"), decl_embedding("var s = \"q\";"),
                                      decl_embedding("var b = true;"), decl_embedding("var y = x;"),
                                      decl_embedding("var z = g(x, 1);")};
  const auto mb = similarity_matrix(bows);
  CHECK(mb.pairs_filled == 10);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(mb.at(i, j) == kappa(bows[i], bows[j]));
  }

  const char* srcs[] = {"fn f(a){ g(a); if (a) { h(a); } return a; }",
                        "fn f(a){ var p = malloc(a); free(p); }",
                        "fn f(a){ while (a) { a = a - 1; } lock(a); unlock(a); }",
                        "fn f(a){ if (a) { return a; } else { g(a); } g(a); }",
                        "fn f(a){ if (a) { var p = malloc(a); } return a; }"};
  std::vector<LogicEmbedding> cfgs;
  for (const char* s : srcs) cfgs.push_back(mu_cfg(oracle::sample_from_source(s)));
  const auto mc = similarity_matrix(cfgs);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      const double expect = i == j ? kappa(cfgs[i], cfgs[i]) : std::max(kappa(cfgs[i], cfgs[j]), kappa(cfgs[j], cfgs[i]));
      CHECK(mc.at(i, j) == expect);
      CHECK(mc.at(i, j) == mc.at(j, i));
      CHECK(mc.at(i, j) >= 0.0);
      CHECK(mc.at(i, j) <= 1.0);
    }
  }
}

TEST_CASE("similarity_matrix: save and load") {
  std::vector<LogicEmbedding> bows = {decl_embedding("var x = 0;"), decl_embedding("var s = \"q\";"),
                                      decl_embedding("var b = true;")};
  const auto m = similarity_matrix(bows);
  const auto path = std::filesystem::temp_directory_path() / "codebias_sim_test.json";
  save_similarity(m, path);
  CHECK(load_similarity(path) == m);
  std::filesystem::remove(path);
}

TEST_CASE("unshuffle: hand cases and oracle") {
  CHECK(unshuffle(oracle::matrix_of(3, {{0, 1, 0.9}, {0, 2, 0.5}, {1, 2, 0.2}})) == std::vector<std::size_t>{0, 1, 2});
  CHECK(unshuffle(oracle::matrix_of(3, {{1, 2, 0.9}, {0, 1, 0.5}, {0, 2, 0.2}})) == std::vector<std::size_t>{1, 2, 0});
  CHECK(unshuffle(oracle::matrix_of(5, {})) == std::vector<std::size_t>{0, 1, 2, 3, 4});
  CHECK(unshuffle(oracle::matrix_of(4, {{2, 3, 0.5}})) == std::vector<std::size_t>{2, 3, 0, 1});

  Rng rng(2);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t n = 1 + rng.below(15);
    std::vector<std::tuple<std::size_t, std::size_t, double>> e;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) e.emplace_back(i, j, static_cast<double>(rng.below(4)) / 4.0);
    }
    const auto m = oracle::matrix_of(n, e);
    const auto order = unshuffle(m);
    CHECK(order == oracle::unshuffle_oracle(m));
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(n);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
  }
}

TEST_CASE("batchify: sizes and concatenation") {
  std::vector<std::size_t> order(10);
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  const auto b = batchify(order, 4);
  REQUIRE(b.size() == 3);
  CHECK(b[0].size() == 4);
  CHECK(b[1].size() == 4);
  CHECK(b[2].size() == 2);
  std::vector<std::size_t> cat;
  for (const auto& x : b) cat.insert(cat.end(), x.begin(), x.end());
  CHECK(cat == order);
  CHECK(batchify(order, 10).size() == 1);
  CHECK(batchify(order, 64).size() == 1);
  CHECK_THROWS_AS(batchify(order, 1), InvalidArgument);
}

TEST_CASE("bpr_loss: hand values") {
  const std::vector<double> w2 = {1, 1, 1, 1};
  const std::vector<int> same = {0, 0};
  std::vector<std::vector<double>> r = {{1.0, 2.0}, {1.0, 2.0}};
  CHECK(bpr_loss(r, same, w2) == doctest::Approx(0.0));
  r = {{1.0, 0.0}, {0.0, 3.0}};
  CHECK(bpr_loss(r, same, w2) == doctest::Approx(1.0));
  const std::vector<int> diff = {0, 1};
  CHECK(bpr_loss(r, diff, w2) == 0.0);
  const std::vector<double> zero_w = {1, 0, 0, 1};
  CHECK(bpr_loss(r, same, zero_w) == 0.0);

  // Pairs (0,1) same label, (0,2) and (1,2) cross label.
  std::vector<std::vector<double>> r3 = {{1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}};
  const std::vector<int> l3 = {0, 0, 1};
  const std::vector<double> w3 = {1, 0.5, 0.3, 0.5, 1, 0.7, 0.3, 0.7, 1};
  const BprValue v = bpr_loss_grad(r3, l3, w3);
  CHECK(v.pairs == 1);
  CHECK(v.loss == doctest::Approx(0.5 * (1.0 - 1.0 / std::sqrt(2.0))).epsilon(1e-14));
}

TEST_CASE("bpr_loss: scale invariance and gradient") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 2 + rng.below(6);
    std::vector<std::vector<double>> r(n, std::vector<double>(4));
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (double& x : r[i]) x = rng.uniform(-1.0, 1.0);
      labels[i] = static_cast<int>(rng.below(2));
    }
    labels[1] = labels[0];
    const auto w = oracle::random_pair_weights(rng, n);
    const BprValue v = bpr_loss_grad(r, labels, w);
    CHECK(v.loss == bpr_loss(r, labels, w));

    auto scaled = r;
    for (double& x : scaled[rng.below(n)]) x *= 3.7;
    CHECK(bpr_loss(scaled, labels, w) == doctest::Approx(v.loss).epsilon(1e-12));

    const double eps = 1e-6;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < 4; ++k) {
        auto up = r, down = r;
        up[i][k] += eps;
        down[i][k] -= eps;
        const double num = (bpr_loss(up, labels, w) - bpr_loss(down, labels, w)) / (2 * eps);
        CHECK(std::abs(num - v.d_reprs[i][k]) <= 1e-7);
      }
    }

    // Same-label reprs that are positive multiples of one another cost nothing.
    auto aligned = r;
    for (std::size_t i = 0; i < n; ++i) {
      aligned[i] = r[labels[i] == labels[0] ? 0 : 1];
      for (double& x : aligned[i]) x *= 1.0 + static_cast<double>(i);
    }
    CHECK(bpr_loss(aligned, labels, w) <= 1e-14);
  }
}

TEST_CASE("gamma_p: schedule") {
  CHECK(gamma_p(0.0) == 0.0);
  CHECK(std::abs(gamma_p(1.0) - std::tanh(5.0)) <= 1e-12);
  CHECK(std::abs(gamma_p(0.5) - std::tanh(2.5)) <= 1e-12);
  CHECK(gamma_p(1.0) == doctest::Approx(0.9999092).epsilon(1e-7));
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const double g = gamma_p(i / 100.0);
    CHECK(g > prev);
    prev = g;
  }
  CHECK_THROWS_AS(gamma_p(-0.1), InvalidArgument);
  CHECK_THROWS_AS(gamma_p(1.1), InvalidArgument);
}
