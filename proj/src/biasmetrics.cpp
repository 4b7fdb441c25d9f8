#include "codebias/biasmetrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <ostream>

#include "codebias/errors.hpp"

namespace codebias {

double CondIdfTable::value(std::string_view word) const {
  auto it = rows.find(std::string(word));
  return it == rows.end() ? 0.0 : it->second.cond_idf;
}

CondIdfTable cond_idf(const Corpus& corpus, int label) {
  if (label < 0 || label >= num_classes(corpus.task)) throw UnknownLabel("label " + std::to_string(label));
  CondIdfTable table;
  table.label = label;
  std::map<std::string, std::set<std::string>> projects_of;
  std::set<std::string> projects;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const Sample& s = corpus.samples[i];
    projects.insert(s.project_id);
    for (const Item& item : items_of(corpus, i)) {
      for (const Token& t : s.tokens) {
        CondIdfRow& row = table.rows[t.text];
        ++row.count;
        if (item.label == label) ++row.label_count;
        projects_of[t.text].insert(s.project_id);
      }
    }
  }
  table.num_projects = projects.size();
  const auto n = static_cast<double>(table.num_projects);
  for (auto& [word, row] : table.rows) {
    row.df = projects_of[word].size();
    row.cond_p = static_cast<double>(row.label_count) / static_cast<double>(row.count);
    row.idf = std::log(n / static_cast<double>(row.df));
    row.cond_idf = row.cond_p * row.idf;
  }
  return table;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

void write_cond_idf_csv(std::span<const CondIdfTable> tables, std::ostream& out) {
  out << "word,label,count,label_count,df,cond_p,idf,cond_idf\n";
  char buf[128];
  for (const auto& t : tables) {
    for (const auto& [word, r] : t.rows) {
      std::snprintf(buf, sizeof buf, "%d,%zu,%zu,%zu,%.17g,%.17g,%.17g", t.label, r.count, r.label_count, r.df,
                    r.cond_p, r.idf, r.cond_idf);
      out << csv_field(word) << ',' << buf << '\n';
    }
  }
}

// ---------------------------------------------------------------- categories

std::string_view to_string(LexCategory c) {
  switch (c) {
    case LexCategory::DeclarationVariable: return "declaration-variable";
    case LexCategory::FunctionName: return "function name";
    case LexCategory::Identifier: return "identifier";
    case LexCategory::MacroLike: return "macro-like";
    case LexCategory::Api: return "API";
    case LexCategory::Keyword: return "keyword";
    case LexCategory::Literal: return "literal";
    case LexCategory::Operator: return "operator";
    case LexCategory::Delimiter: return "delimiter";
    case LexCategory::Other: return "other";
  }
  return "other";
}

namespace {

bool all_caps(std::span<const Token> tokens, std::size_t begin, std::size_t end) {
  bool letter = false;
  for (std::size_t t = begin; t < end; ++t) {
    for (char c : tokens[t].text) {
      if (std::islower(static_cast<unsigned char>(c))) return false;
      if (std::isupper(static_cast<unsigned char>(c))) letter = true;
    }
  }
  return letter;
}

}  // namespace

std::vector<LexCategory> token_categories(const Sample& sample) {
  const auto& tokens = sample.tokens;
  const Ast ast = parse(tokens);
  std::vector<LexCategory> cat(tokens.size(), LexCategory::Other);
  if (sample.task == Task::TypeInf) {
    for (std::size_t n = 0; n < ast.nodes.size(); ++n) {
      if (ast.nodes[n].kind != NodeKind::VarDecl) continue;
      const int name = declaration_target(ast, static_cast<int>(n));
      if (name < 0) continue;
      for (std::size_t t = ast[name].tok_begin; t < ast[name].tok_end; ++t) cat[t] = LexCategory::DeclarationVariable;
    }
    return cat;
  }
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const TokenKind k = tokens[t].kind;
    if (k == TokenKind::Keyword) cat[t] = LexCategory::Keyword;
    else if (is_literal(k)) cat[t] = LexCategory::Literal;
    else if (k == TokenKind::Operator) cat[t] = LexCategory::Operator;
    else if (k == TokenKind::Delimiter) cat[t] = LexCategory::Delimiter;
    else if (k == TokenKind::ApiName) cat[t] = LexCategory::Api;
  }
  for (const auto& span : identifier_spans(tokens)) {
    const LexCategory c = all_caps(tokens, span.first, span.last) ? LexCategory::MacroLike : LexCategory::Identifier;
    for (std::size_t t = span.first; t < span.last; ++t) cat[t] = c;
  }
  for (std::size_t n = 0; n < ast.nodes.size(); ++n) {
    const AstNode& node = ast.nodes[n];
    if (node.kind != NodeKind::Function && node.kind != NodeKind::Call) continue;
    const AstNode& name = ast[node.children.front()];
    for (std::size_t t = name.tok_begin; t < name.tok_end; ++t) {
      if (is_identifier_piece(tokens[t])) cat[t] = LexCategory::FunctionName;
    }
  }
  return cat;
}

// ---------------------------------------------------------------- IG ranking

SortedIgDistribution mean_ig_distribution(std::span<const AttributedSample> attributed) {
  struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
    std::array<std::size_t, 10> cats{};
  };
  std::map<std::string, Acc> acc;
  for (const auto& a : attributed) {
    const Sample& s = *a.sample;
    if (a.per_token.size() != s.tokens.size()) {
      throw Misalignment("attribution for " + s.sample_id + " has " + std::to_string(a.per_token.size()) +
                         " weights for " + std::to_string(s.tokens.size()) + " tokens");
    }
    const auto cats = token_categories(s);
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      Acc& x = acc[s.tokens[t].text];
      x.sum += a.per_token[t];
      ++x.n;
      ++x.cats[static_cast<std::size_t>(cats[t])];
    }
  }
  SortedIgDistribution dist;
  for (const auto& [word, x] : acc) {
    IgEntry e;
    e.word = word;
    e.mean_ig = x.sum / static_cast<double>(x.n);
    e.occurrences = x.n;
    e.category = static_cast<LexCategory>(std::max_element(x.cats.begin(), x.cats.end()) - x.cats.begin());
    dist.entries.push_back(std::move(e));
  }
  // acc is ordered by word, so a stable sort leaves ties in word order.
  std::stable_sort(dist.entries.begin(), dist.entries.end(),
                   [](const IgEntry& a, const IgEntry& b) { return a.mean_ig > b.mean_ig; });
  return dist;
}

nlohmann::json to_json(const SortedIgDistribution& dist) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : dist.entries) {
    arr.push_back({{"word", e.word},
                   {"mean_ig", e.mean_ig},
                   {"occurrences", e.occurrences},
                   {"category", to_string(e.category)}});
  }
  return arr;
}

// ---------------------------------------------------------------- alignment

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("pearson of series with different lengths");
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) throw DegenerateVariance("pearson needs at least two points");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  // Relative threshold so that rounding noise on a constant series counts
  // as constant.
  const double tiny = 1e-24;
  if (saa <= tiny * (ma * ma * n + 1.0) || sbb <= tiny * (mb * mb * n + 1.0)) {
    throw DegenerateVariance("constant series");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

Alignment alignment(const SortedIgDistribution& ig, const CondIdfTable& table, int order) {
  Alignment out;
  std::vector<double> xs, mean_ig;
  for (const auto& e : ig.entries) {
    auto it = table.rows.find(e.word);
    if (it == table.rows.end()) continue;
    xs.push_back(static_cast<double>(xs.size()));
    mean_ig.push_back(e.mean_ig);
    out.cond_idf.push_back(it->second.cond_idf);
  }
  if (xs.empty()) throw DegenerateVariance("no shared vocabulary between distribution and table");
  out.fit = polyfit(xs, out.cond_idf, order);
  out.fitted.reserve(xs.size());
  for (double x : xs) out.fitted.push_back(out.fit(x));
  out.pearson_r = pearson(mean_ig, out.fitted);
  return out;
}

// ---------------------------------------------------------------- bias ratio

double topn_bias_ratio(std::span<const AttributedSample> attributed, const std::set<std::string>& bias_vocab,
                       std::size_t n, RatioMode mode) {
  if (n < 1) throw InvalidArgument("top-n needs n >= 1");
  if (attributed.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& a : attributed) {
    const Sample& s = *a.sample;
    if (a.per_token.size() != s.tokens.size()) throw Misalignment("attribution length differs from sample");
    if (s.tokens.empty()) continue;
    AttributionVector view;
    view.per_token = a.per_token;
    const auto top = top_n_tokens(view, std::min(n, s.tokens.size()));
    std::size_t in_vocab = 0;
    for (std::size_t t : top) in_vocab += bias_vocab.count(s.tokens[t].text);
    const bool ok = mode == RatioMode::Contains ? in_vocab > 0 : in_vocab == top.size();
    hits += ok ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(attributed.size());
}

}  // namespace codebias
