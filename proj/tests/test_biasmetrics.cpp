#include <doctest.h>

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <numeric>
#include <sstream>

#include "codebias/biasmetrics.hpp"
#include "codebias/errors.hpp"
#include "oracles.hpp"

using namespace codebias;
using boost::multiprecision::cpp_rational;

namespace {

Sample words_sample(const std::string& project, int label, const std::vector<std::string>& words) {
  Sample s;
  s.sample_id = project + "/" + std::to_string(label);
  s.project_id = project;
  s.vuln_label = label;
  for (const auto& w : words) s.tokens.push_back({w, TokenKind::Identifier, 0, 0});
  return s;
}

// Least squares through the normal equations, solved exactly.
std::vector<cpp_rational> exact_lsq(const std::vector<double>& xs, const std::vector<double>& ys, int order) {
  const std::size_t k = static_cast<std::size_t>(order) + 1;
  std::vector<std::vector<cpp_rational>> a(k, std::vector<cpp_rational>(k + 1, 0));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<cpp_rational> pw(2 * k, 1);
    for (std::size_t d = 1; d < 2 * k; ++d) pw[d] = pw[d - 1] * cpp_rational(xs[i]);
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) a[r][c] += pw[r + c];
      a[r][k] += pw[r] * cpp_rational(ys[i]);
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t piv = c;
    while (a[piv][c] == 0) ++piv;
    std::swap(a[piv], a[c]);
    for (std::size_t r = 0; r < k; ++r) {
      if (r == c || a[r][c] == 0) continue;
      const cpp_rational f = a[r][c] / a[c][c];
      for (std::size_t j = c; j <= k; ++j) a[r][j] -= f * a[c][j];
    }
  }
  std::vector<cpp_rational> out(k);
  for (std::size_t r = 0; r < k; ++r) out[r] = a[r][k] / a[r][r];
  return out;
}

}  // namespace

TEST_CASE("cond_idf: hand-counted values") {
  Corpus c;
  c.samples = {words_sample("a", 1, {"w", "x"}), words_sample("b", 0, {"x"})};
  const CondIdfTable t = cond_idf(c, 1);
  CHECK(t.value("w") == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(t.rows.at("x").idf == 0.0);
  CHECK(t.value("x") == 0.0);

  Corpus d;
  for (int i = 0; i < 10; ++i) d.samples.push_back(words_sample("a", i < 7 ? 1 : 0, {"w"}));
  for (const char* p : {"b", "c", "d"}) d.samples.push_back(words_sample(p, 0, {"z"}));
  const CondIdfTable u = cond_idf(d, 1);
  const CondIdfRow& w = u.rows.at("w");
  CHECK(w.count == 10);
  CHECK(w.label_count == 7);
  CHECK(w.df == 1);
  CHECK(u.num_projects == 4);
  CHECK(w.cond_idf == doctest::Approx(0.9704).epsilon(1e-4));
  CHECK(w.cond_idf == w.cond_p * w.idf);
  CHECK(u.value("never") == 0.0);

  CHECK_THROWS_AS(cond_idf(d, 2), UnknownLabel);
}

TEST_CASE("cond_idf: brute-force oracle and invariants") {
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Corpus c = oracle::random_counting_corpus(rng, 3000);
    for (int l = 0; l < 2; ++l) {
      const CondIdfTable t = cond_idf(c, l);
      const auto o = oracle::brute_cond_idf(c, l);
      REQUIRE(t.rows.size() == o.size());
      for (const auto& [word, row] : t.rows) {
        const auto& r = o.at(word);
        CHECK(row.count == r.count);
        CHECK(row.label_count == r.label_count);
        CHECK(row.df == r.df);
        CHECK(row.cond_idf == r.cond_idf);
        CHECK(row.cond_p >= 0.0);
        CHECK(row.cond_p <= 1.0);
        CHECK(row.idf >= 0.0);
        CHECK((row.idf == 0.0) == (row.df == t.num_projects));
      }
    }
    // Label counts partition the word count.
    const CondIdfTable t0 = cond_idf(c, 0), t1 = cond_idf(c, 1);
    for (const auto& [word, row] : t0.rows) CHECK(row.label_count + t1.rows.at(word).label_count == row.count);
  }
}

TEST_CASE("cond_idf: csv export") {
  Corpus c;
  c.samples = {words_sample("a", 1, {"w"}), words_sample("b", 0, {"x,y"})};
  std::vector<CondIdfTable> tables = {cond_idf(c, 0), cond_idf(c, 1)};
  std::ostringstream out;
  write_cond_idf_csv(tables, out);
  const std::string csv = out.str();
  CHECK(csv.rfind("word,label,count,label_count,df,cond_p,idf,cond_idf\n", 0) == 0);
  CHECK(csv.find("\"x,y\"") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("mean_ig_distribution: means, ordering, oracle") {
  // fn f ( a ) { return a ; }
  const Sample s = oracle::sample_from_source("fn f(a) { return a; }");
  std::vector<AttributedSample> one = {{&s, {0, 0, 0, 0.3, 0, 0, 0, 0.5, 0, 0}}};
  const auto d = mean_ig_distribution(one);
  REQUIRE(d.entries.size() == 9);
  CHECK(d.entries[0].word == "a");
  CHECK(d.entries[0].mean_ig == doctest::Approx(0.4));
  CHECK(d.entries[0].occurrences == 2);
  CHECK(d.entries[1].word == "(");  // zero-weight ties, broken by text

  std::vector<AttributedSample> hot = {{&s, {0, 1, 0, 0, 0, 0, 0, 0, 0, 0}}};
  CHECK(mean_ig_distribution(hot).entries[0].word == "f");
  CHECK(mean_ig_distribution(hot).entries[0].mean_ig == 1.0);

  std::vector<AttributedSample> bad = {{&s, {1.0}}};
  CHECK_THROWS_AS(mean_ig_distribution(bad), Misalignment);

  Rng rng(2);
  GenConfig g;
  g.num_projects = 4;
  g.samples_per_project = 10;
  const Corpus c = generate_corpus(g);
  std::vector<AttributedSample> att;
  std::map<std::string, std::pair<double, std::size_t>> group;
  for (const auto& smp : c.samples) {
    std::vector<double> w(smp.tokens.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = rng.uniform();
      group[smp.tokens[i].text].first += w[i];
      group[smp.tokens[i].text].second += 1;
    }
    att.push_back({&smp, w});
  }
  const auto dist = mean_ig_distribution(att);
  CHECK(dist.entries.size() == group.size());
  for (std::size_t i = 0; i < dist.entries.size(); ++i) {
    const auto& e = dist.entries[i];
    const auto& [sum, n] = group.at(e.word);
    CHECK(e.occurrences == n);
    CHECK(e.mean_ig == doctest::Approx(sum / static_cast<double>(n)).epsilon(1e-12));
    if (i > 0) CHECK(dist.entries[i - 1].mean_ig >= e.mean_ig);
  }

  // A common positive scale leaves the ranking unchanged.
  auto scaled = att;
  for (auto& a : scaled) {
    for (double& w : a.per_token) w *= 0.125;
  }
  const auto ds = mean_ig_distribution(scaled);
  for (std::size_t i = 0; i < ds.entries.size(); ++i) CHECK(ds.entries[i].word == dist.entries[i].word);
}

TEST_CASE("token_categories: lexical classes") {
  Sample s = oracle::sample_from_source("fn readBuf(n) { var p = malloc(n); if (p) { free(p); } return MAX_N; }");
  auto cats = token_categories(s);
  REQUIRE(cats.size() == s.tokens.size());
  CHECK(cats[0] == LexCategory::Keyword);
  CHECK(cats[1] == LexCategory::FunctionName);  // read
  CHECK(cats[2] == LexCategory::FunctionName);  // Buf
  std::size_t api = 0, macro = 0;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    api += cats[i] == LexCategory::Api;
    macro += cats[i] == LexCategory::MacroLike;
    if (s.tokens[i].text == "p") CHECK(cats[i] == LexCategory::Identifier);
  }
  CHECK(api == 2);
  CHECK(macro == 2);  // MAX, N

  // TypeInf only tags declaration targets.
  s.task = Task::TypeInf;
  cats = token_categories(s);
  std::size_t decl = 0;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    if (cats[i] == LexCategory::DeclarationVariable) {
      CHECK(s.tokens[i].text == "p");
      ++decl;
    }
  }
  CHECK(decl == 1);
}

TEST_CASE("polyfit: exact representations") {
  std::vector<double> xs, sq, cst;
  for (int i = 0; i < 12; ++i) {
    xs.push_back(0.5 * i - 1.0);
    sq.push_back(xs.back() * xs.back());
    cst.push_back(2.5);
  }
  const PolyFit f = polyfit(xs, sq, 2);
  CHECK(f.residual_norm < 1e-9);
  for (double x : xs) CHECK(f(x) == doctest::Approx(x * x).epsilon(1e-10));
  const PolyFit g = polyfit(xs, cst, 6);
  CHECK(g.coeffs[0] == doctest::Approx(2.5).epsilon(1e-12));
  for (std::size_t j = 1; j < g.coeffs.size(); ++j) CHECK(std::abs(g.coeffs[j]) < 1e-9);
  CHECK_THROWS_AS(polyfit(std::span(xs).first(3), std::span(sq).first(3), 3), Underdetermined);
}

TEST_CASE("polyfit: exact rational normal equations") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> xs, ys;
    for (int i = 0; i < 8; ++i) {
      xs.push_back(static_cast<double>(i) + static_cast<double>(rng.below(8)) / 16.0);
      ys.push_back(static_cast<double>(static_cast<int>(rng.below(64)) - 32) / 8.0);
    }
    const auto exact = exact_lsq(xs, ys, 3);
    const auto raw = polyfit(xs, ys, 3).raw_coefficients();
    REQUIRE(raw.size() == 4);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(raw[j] - exact[j].convert_to<double>()) <= 1e-6);
  }
}

TEST_CASE("polyfit: residual never exceeds the zero polynomial's") {
  Rng rng(4);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t n = 12 + rng.below(100);
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      xs[i] = static_cast<double>(i);
      ys[i] = rng.uniform(-1.0, 1.0);
    }
    const PolyFit f = polyfit(xs, ys, 10);
    double y2 = 0.0, r2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y2 += ys[i] * ys[i];
      r2 += (ys[i] - f(xs[i])) * (ys[i] - f(xs[i]));
    }
    CHECK(f.residual_norm <= std::sqrt(y2) + 1e-12);
    CHECK(f.residual_norm == doctest::Approx(std::sqrt(r2)).epsilon(1e-8));
  }
}

TEST_CASE("pearson and alignment") {
  const std::vector<double> a = {3.0, 1.0, 4.0, 1.5, 5.0};
  std::vector<double> neg(a);
  for (double& x : neg) x = -x;
  CHECK(pearson(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(a, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  const std::vector<double> flat(5, 2.0);
  CHECK_THROWS_AS(pearson(a, flat), DegenerateVariance);

  // Cond-Idf that decreases with IG rank fits a decreasing curve: r > 0.
  SortedIgDistribution ig;
  CondIdfTable table;
  table.num_projects = 4;
  for (int i = 0; i < 30; ++i) {
    const std::string w = "w" + std::to_string(100 + i);
    ig.entries.push_back({w, 1.0 - i / 30.0, 1, LexCategory::Identifier});
    CondIdfRow row;
    row.cond_idf = std::log(4.0) * (1.0 - i / 30.0) + (i % 3) * 0.01;
    table.rows[w] = row;
  }
  const Alignment al = alignment(ig, table, 10);
  CHECK(al.pearson_r > 0.9);
  CHECK(al.fitted.size() == 30);
  CHECK(al.cond_idf.size() == 30);
  for (auto& [w, row] : table.rows) row.cond_idf = 1.0;
  CHECK_THROWS_AS(alignment(ig, table, 10), DegenerateVariance);
}

TEST_CASE("topn_bias_ratio: trivial and hand-counted cases") {
  const Sample s1 = words_sample("a", 0, {"a", "b", "c", "d"});
  const Sample s2 = words_sample("a", 0, {"a", "b", "c", "d"});
  const Sample s3 = words_sample("a", 0, {"x", "b", "y", "z"});
  const Sample s4 = words_sample("a", 0, {"x", "y"});
  std::vector<AttributedSample> att = {{&s1, {0.9, 0.1, 0.2, 0.3}},   // top-3 {a, d, c}
                                       {&s2, {0.0, 0.1, 0.2, 0.3}},   // top-3 {d, c, b}
                                       {&s3, {0.1, 0.2, 0.3, 0.4}},   // top-3 {z, y, b}
                                       {&s4, {0.5, 0.5}}};            // top-2 {x, y}
  const std::set<std::string> bias = {"a", "b"};
  CHECK(topn_bias_ratio(att, {}, 3, RatioMode::Contains) == 0.0);
  CHECK(topn_bias_ratio(att, {"a", "b", "c", "d", "x", "y", "z"}, 3, RatioMode::Only) == 1.0);
  CHECK(topn_bias_ratio(att, bias, 3, RatioMode::Contains) == 0.75);
  CHECK(topn_bias_ratio(att, bias, 1, RatioMode::Contains) == 0.25);
  CHECK(topn_bias_ratio(att, {"a", "c", "d"}, 3, RatioMode::Only) == 0.25);
}
