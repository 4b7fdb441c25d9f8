#include "codebias/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "codebias/errors.hpp"
#include "codebias/random.hpp"

namespace codebias {

std::string_view to_string(Task task) { return task == Task::TypeInf ? "TypeInf" : "VulnDet"; }

Task task_from_string(std::string_view name) {
  if (name == "TypeInf") return Task::TypeInf;
  if (name == "VulnDet") return Task::VulnDet;
  throw ConfigError("unknown task '" + std::string(name) + "'");
}

int num_classes(Task task) { return task == Task::TypeInf ? 3 : 2; }

std::string_view type_class_name(int type_class) {
  switch (type_class) {
    case kNumber: return "number";
    case kString: return "string";
    case kBoolean: return "boolean";
    default: throw UnknownLabel("type class " + std::to_string(type_class));
  }
}

int type_class_from_name(std::string_view name) {
  if (name == "number") return kNumber;
  if (name == "string") return kString;
  if (name == "boolean") return kBoolean;
  throw UnknownLabel("type class '" + std::string(name) + "'");
}

std::vector<Item> items_of(const Corpus& corpus, std::size_t sample_index) {
  const Sample& s = corpus.samples.at(sample_index);
  std::vector<Item> out;
  if (s.task == Task::VulnDet) {
    out.push_back({sample_index, std::nullopt, s.vuln_label});
  } else {
    for (const auto& t : s.targets) out.push_back({sample_index, t.token_index, t.type_class});
  }
  return out;
}

std::vector<Item> items_of(const Corpus& corpus, const std::vector<std::size_t>& sample_indices) {
  std::vector<Item> out;
  for (std::size_t i : sample_indices) {
    auto v = items_of(corpus, i);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

// ---------------------------------------------------------------- split

namespace {

SplitSpec split_ids(std::vector<std::string> projects, std::uint64_t seed) {
  const auto n = static_cast<long>(projects.size());
  if (n < 4) throw ConfigError("split needs at least 4 projects, got " + std::to_string(n));
  Rng rng(mix_seed(seed, 0x5b1));
  rng.shuffle(projects);
  const long n_test = std::max(1L, std::lround(0.2 * static_cast<double>(n)));
  const long n_val = std::max(1L, std::lround(0.1 * static_cast<double>(n)));
  const long n_train = n - n_test - n_val;
  if (n_train < 1) throw ConfigError("split leaves no TRAIN projects");
  SplitSpec s;
  s.seed = seed;
  s.train_projects.assign(projects.begin(), projects.begin() + n_train);
  s.ood_val_projects.assign(projects.begin() + n_train, projects.begin() + n_train + n_val);
  s.ood_test_projects.assign(projects.begin() + n_train + n_val, projects.end());
  return s;
}

}  // namespace

SplitSpec split_projects(const Corpus& corpus, std::uint64_t seed) { return split_ids(corpus.projects, seed); }

SampleSplit assign_samples(const Corpus& corpus, const SplitSpec& split) {
  const std::set<std::string> train(split.train_projects.begin(), split.train_projects.end());
  const std::set<std::string> val(split.ood_val_projects.begin(), split.ood_val_projects.end());
  const std::set<std::string> test(split.ood_test_projects.begin(), split.ood_test_projects.end());
  std::map<std::string, std::vector<std::size_t>> by_project;
  SampleSplit out;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& p = corpus.samples[i].project_id;
    if (train.count(p)) {
      by_project[p].push_back(i);
    } else if (val.count(p)) {
      out.ood_val.push_back(i);
    } else if (test.count(p)) {
      out.ood_test.push_back(i);
    }
  }
  Rng rng(mix_seed(split.seed, 0x11d));
  for (const auto& p : split.train_projects) {
    auto idx = by_project[p];
    rng.shuffle(idx);
    const auto n_test = static_cast<std::size_t>(std::lround(split.iid_test_fraction * static_cast<double>(idx.size())));
    out.iid_test.insert(out.iid_test.end(), idx.begin(), idx.begin() + static_cast<long>(n_test));
    out.train.insert(out.train.end(), idx.begin() + static_cast<long>(n_test), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.iid_test.begin(), out.iid_test.end());
  return out;
}

Corpus subset(const Corpus& corpus, const std::vector<std::string>& projects,
              const std::vector<std::size_t>& sample_indices) {
  Corpus out;
  out.task = corpus.task;
  out.projects = projects;
  out.bias_vocab = corpus.bias_vocab;
  for (const auto& p : projects) {
    auto it = corpus.label_subwords.find(p);
    if (it != corpus.label_subwords.end()) out.label_subwords.insert(*it);
  }
  for (std::size_t i : sample_indices) out.samples.push_back(corpus.samples.at(i));
  return out;
}

// ---------------------------------------------------------------- generator

namespace {

const std::vector<std::string> kCommonWords = {"buf", "len", "data", "val", "tmp", "idx",
                                               "count", "size", "node", "item", "key", "res"};
const std::vector<std::string> kMacroNames = {"MAX_LEN", "BUF_SIZE", "RETRY_MAX", "MODE_ON"};
const std::vector<std::string> kStrings = {"\"ok\"", "\"a\"", "\"id\"", "\"name\"", "\"err\"", "\"x\"", "\"done\"", "\"tag\""};

std::string capitalize(std::string w) {
  if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

class WordFactory {
 public:
  explicit WordFactory(Rng& rng) : rng_(rng) {
    for (const auto& w : kCommonWords) used_.insert(w);
    for (const char* w : {"fn", "var", "if", "else", "while", "return", "true", "false", "malloc", "free", "lock",
                          "unlock"}) {
      used_.insert(w);
    }
  }

  // Fresh lowercase word, unique across the whole corpus.
  std::string fresh() {
    static constexpr std::string_view kCons = "bdfgklmnprstvz";
    static constexpr std::string_view kVow = "aeiou";
    for (;;) {
      std::string w;
      const std::size_t len = 3 + rng_.below(2);
      for (std::size_t i = 0; i < len; ++i) {
        const auto& set = (i % 2 == 0) ? kCons : kVow;
        w += set[static_cast<std::size_t>(rng_.below(set.size()))];
      }
      if (used_.insert(w).second) return w;
    }
  }

 private:
  Rng& rng_;
  std::set<std::string> used_;
};

struct Project {
  std::string id;
  std::vector<std::string> pool;         // lowercase project-specific words
  std::vector<std::string> label_words;  // capitalized, one per class
  std::vector<std::string> helpers;      // helper function names
  std::set<std::string> specific;        // every project-specific piece text
};

// Emits one MiniLang function as source text while tracking local names.
class FnWriter {
 public:
  explicit FnWriter(Rng& rng, const Project& proj) : rng_(rng), proj_(proj) {}

  std::string word() {
    // Mostly project vocabulary, sometimes a shared common word.
    return rng_.bernoulli(0.7) ? rng_.pick(proj_.pool) : rng_.pick(kCommonWords);
  }

  // Unique local identifier of 1-2 pieces.
  std::string local() {
    for (;;) {
      std::string n = word();
      if (rng_.bernoulli(0.6)) n += capitalize(word());
      if (taken_.insert(n).second) return n;
    }
  }

  // Identifier whose last piece is the given capitalized subword.
  std::string carrier(const std::string& subword) {
    for (;;) {
      std::string n = word();
      if (rng_.bernoulli(0.3)) n += capitalize(word());
      n += subword;
      if (taken_.insert(n).second) return n;
    }
  }

  std::string num() { return std::to_string(rng_.below(10)); }
  std::string str() { return rng_.pick(kStrings); }
  std::string boolean() { return rng_.bernoulli(0.5) ? "true" : "false"; }
  std::string helper() { return rng_.pick(proj_.helpers); }

  Rng& rng() { return rng_; }

 private:
  Rng& rng_;
  const Project& proj_;
  std::set<std::string> taken_;
};

std::string render(const std::string& fname, const std::vector<std::string>& params,
                   const std::vector<std::string>& body) {
  std::ostringstream os;
  os << "fn " << fname << "(";
  for (std::size_t i = 0; i < params.size(); ++i) os << (i ? ", " : "") << params[i];
  os << ") {\n";
  for (const auto& s : body) os << "  " << s << "\n";
  os << "}\n";
  return os.str();
}

// Inserts filler statements at random positions of a statement list, never
// before position `from`.
void sprinkle(Rng& rng, std::vector<std::string>& body, std::size_t from, std::vector<std::string> fillers) {
  for (auto& f : fillers) {
    const std::size_t hi = body.size();
    const std::size_t at = from + static_cast<std::size_t>(rng.below(hi - from + 1));
    body.insert(body.begin() + static_cast<long>(at), std::move(f));
  }
}

std::string vuln_source(FnWriter& w, int label, const std::string& label_word) {
  Rng& rng = w.rng();
  const std::string fname = w.local();
  const std::string p1 = w.local();
  const std::string p2 = w.local();
  const std::string carrier = w.carrier(label_word);

  std::vector<std::string> body;
  body.push_back("var " + carrier + " = " + w.num() + ";");

  const bool memory = rng.bernoulli(0.6);
  std::vector<std::string> acquire;
  std::vector<std::string> uses;
  std::vector<std::string> release;
  if (memory) {
    const std::string ptr = w.local();
    const std::string size = rng.bernoulli(0.3) ? rng.pick(kMacroNames) : std::to_string(4 + rng.below(60));
    acquire.push_back("var " + ptr + " = malloc(" + size + ");");
    uses.push_back(w.helper() + "(" + ptr + ", " + carrier + ");");
    if (rng.bernoulli(0.5)) uses.push_back("if (" + carrier + " > " + w.num() + ") { " + w.helper() + "(" + ptr + "); }");
    if (rng.bernoulli(0.8)) {
      release.push_back("free(" + ptr + ");");
    } else {
      release.push_back("if (" + p1 + " > " + w.num() + ") { free(" + ptr + "); } else { free(" + ptr + "); }");
    }
  } else {
    const std::string mtx = rng.bernoulli(0.5) ? p2 : w.local();
    acquire.push_back("lock(" + mtx + ");");
    uses.push_back(carrier + " = " + carrier + " + " + w.num() + ";");
    if (rng.bernoulli(0.5)) uses.push_back(w.helper() + "(" + mtx + ", " + carrier + ");");
    release.push_back("unlock(" + mtx + ");");
  }

  std::vector<std::string> fillers;
  const std::size_t n_fill = 1 + rng.below(3);
  for (std::size_t i = 0; i < n_fill; ++i) {
    switch (rng.below(5)) {
      case 0: fillers.push_back(carrier + " = " + carrier + " + " + w.num() + ";"); break;
      case 1: fillers.push_back(w.helper() + "(" + p1 + ", " + carrier + ");"); break;
      case 2:
        fillers.push_back("while (" + carrier + " < " + w.num() + ") { " + carrier + " = " + carrier + " + 1; }");
        break;
      case 3:
        fillers.push_back("if (" + p1 + " == " + w.num() + ") { " + w.helper() + "(" + carrier + "); } else { " + p2 +
                          " = " + w.num() + "; }");
        break;
      default: fillers.push_back("var " + w.local() + " = " + p1 + " * " + w.num() + ";"); break;
    }
  }

  const std::size_t head = body.size();
  body.insert(body.end(), acquire.begin(), acquire.end());
  body.insert(body.end(), uses.begin(), uses.end());
  if (label == 0) body.insert(body.end(), release.begin(), release.end());
  sprinkle(rng, body, head, std::move(fillers));
  body.push_back(rng.bernoulli(0.7) ? "return " + carrier + ";" : "return 0;");
  return render(fname, {p1, p2}, body);
}

std::string typed_literal(FnWriter& w, int type) {
  switch (type) {
    case kNumber: return w.num();
    case kString: return w.str();
    default: return w.boolean();
  }
}

std::string initializer(FnWriter& w, int type, const std::string& param) {
  Rng& rng = w.rng();
  const std::string lit = typed_literal(w, type);
  if (rng.bernoulli(0.6)) return lit;
  switch (type) {
    case kNumber: return rng.bernoulli(0.5) ? param + " + " + lit : lit + " * " + w.num();
    case kString: return param + " + " + lit;
    default: return param + (rng.bernoulli(0.5) ? " && " : " || ") + lit;
  }
}

std::string usage(FnWriter& w, int type, const std::string& v, const std::string& param) {
  Rng& rng = w.rng();
  switch (type) {
    case kNumber:
      switch (rng.below(4)) {
        case 0: return v + " = " + v + " + " + w.num() + ";";
        case 1: return "if (" + v + " > " + w.num() + ") { " + w.helper() + "(" + v + "); }";
        case 2: return "while (" + v + " < " + w.num() + ") { " + v + " = " + v + " + 1; }";
        default: return w.helper() + "(" + v + ", " + w.num() + ");";
      }
    case kString:
      switch (rng.below(3)) {
        case 0: return v + " = " + v + " + " + w.str() + ";";
        case 1: return w.helper() + "(" + v + ", " + w.str() + ");";
        default: return "if (" + v + " == " + w.str() + ") { " + w.helper() + "(" + param + "); }";
      }
    default:
      switch (rng.below(4)) {
        case 0: return "if (" + v + ") { " + w.helper() + "(" + param + "); }";
        case 1: return v + " = " + v + " && " + w.boolean() + ";";
        case 2: return "while (" + v + ") { " + v + " = false; }";
        default: return w.helper() + "(" + v + ", " + w.boolean() + ");";
      }
  }
}

std::string typeinf_source(FnWriter& w, int label, const std::string& label_word, std::string& target_name) {
  Rng& rng = w.rng();
  const std::string fname = w.local();
  const std::string p1 = w.local();
  target_name = w.carrier(label_word);

  // Every function mixes literal types. The target's type leads the literal
  // count by exactly one, so the evidence is learnable from token statistics
  // but weaker than a name that is repeated at every use of the target.
  const std::size_t extra = 1 + rng.below(2);
  std::vector<std::string> stmts;
  for (std::size_t i = 0; i < extra; ++i) {
    stmts.push_back(rng.bernoulli(0.5) ? w.helper() + "(" + target_name + ", " + typed_literal(w, label) + ");"
                                       : usage(w, label, target_name, p1));
  }
  const int lead = 1 + static_cast<int>(extra);
  for (int other = 0; other < 3; ++other) {
    if (other == label) continue;
    const int n = rng.bernoulli(0.5) ? lead - 1 : static_cast<int>(rng.below(static_cast<std::uint64_t>(lead)));
    for (int i = 0; i < n; ++i) stmts.push_back("var " + w.local() + " = " + typed_literal(w, other) + ";");
  }
  rng.shuffle(stmts);

  std::vector<std::string> body;
  if (rng.bernoulli(0.5)) body.push_back(w.helper() + "(" + p1 + ");");
  body.push_back("var " + target_name + " = " + initializer(w, label, p1) + ";");
  body.insert(body.end(), stmts.begin(), stmts.end());
  body.push_back("return " + target_name + ";");
  return render(fname, {p1}, body);
}

// Per-project, per-label subword assignment. Of the n_l samples with label l,
// round(b * n_l) carry subword l; the rest cycle through all classes so that
// uncorrelated planting is balanced.
std::vector<int> assign_subwords(Rng& rng, const std::vector<int>& labels, int classes, double strength) {
  std::vector<int> word(labels.size(), 0);
  int cycle = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  for (int l = 0; l < classes; ++l) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == l) idx.push_back(i);
    }
    rng.shuffle(idx);
    const auto k = static_cast<std::size_t>(std::lround(strength * static_cast<double>(idx.size())));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (j < k) {
        word[idx[j]] = l;
      } else {
        word[idx[j]] = cycle;
        cycle = (cycle + 1) % classes;
      }
    }
  }
  return word;
}

void index_sample(Sample& s, const Project& proj, const std::string& target_name) {
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    const Token& t = s.tokens[i];
    if (s.task == Task::VulnDet && t.kind == TokenKind::ApiName) s.evidence_indices.push_back(i);
    if (is_identifier_piece(t) && proj.specific.count(t.text)) s.bias_token_indices.push_back(i);
  }
  if (s.task == Task::TypeInf) {
    const Ast ast = parse(s.tokens);
    for (std::size_t n = 0; n < ast.nodes.size(); ++n) {
      const AstNode& node = ast.nodes[n];
      if (node.kind != NodeKind::VarDecl) continue;
      const int name = declaration_target(ast, static_cast<int>(n));
      if (node_label(ast, s.tokens, name) != target_name) continue;
      s.targets.front().token_index = ast[name].tok_end - 1;
      for (std::size_t t = ast[name].tok_end; t < node.tok_end; ++t) {
        if (is_literal(s.tokens[t].kind)) {
          s.evidence_indices.push_back(t);
          break;
        }
      }
      break;
    }
  }
}

}  // namespace

Corpus generate_corpus(const GenConfig& cfg) {
  if (cfg.num_projects < 4) throw ConfigError("num_projects must be >= 4");
  if (cfg.samples_per_project < num_classes(cfg.task)) throw ConfigError("samples_per_project too small for class balance");
  if (!(cfg.bias_strength >= 0.0 && cfg.bias_strength <= 1.0)) throw ConfigError("bias_strength must lie in [0,1]");

  Rng rng(mix_seed(cfg.seed, 0xc0));
  WordFactory words(rng);
  const int classes = num_classes(cfg.task);

  Corpus corpus;
  corpus.task = cfg.task;
  // Naming pieces are shared across projects, as in real code: each project
  // draws its pool from a corpus-wide list, so most names occur in several
  // projects. Only the label subwords are unique to one project.
  std::vector<std::string> shared;
  for (int i = 0; i < 3 * cfg.num_projects; ++i) shared.push_back(words.fresh());
  std::vector<Project> projects;
  for (int p = 0; p < cfg.num_projects; ++p) {
    Project proj;
    char id[16];
    std::snprintf(id, sizeof id, "proj%02d", p);
    proj.id = id;
    std::vector<std::string> order = shared;
    rng.shuffle(order);
    proj.pool.assign(order.begin(), order.begin() + 10);
    for (int l = 0; l < classes; ++l) proj.label_words.push_back(capitalize(words.fresh()));
    for (int i = 0; i < 3; ++i) {
      proj.helpers.push_back(proj.pool[static_cast<std::size_t>(i)] + capitalize(kCommonWords[rng.below(kCommonWords.size())]));
    }
    for (const auto& w : proj.pool) {
      proj.specific.insert(w);
      proj.specific.insert(capitalize(w));
    }
    for (const auto& w : proj.label_words) proj.specific.insert(w);
    corpus.projects.push_back(proj.id);
    corpus.label_subwords[proj.id] = proj.label_words;
    projects.push_back(std::move(proj));
  }

  const SplitSpec split = split_ids(corpus.projects, cfg.split_seed);
  const std::set<std::string> train(split.train_projects.begin(), split.train_projects.end());

  for (std::size_t p = 0; p < projects.size(); ++p) {
    const Project& proj = projects[p];
    std::vector<int> labels;
    for (int i = 0; i < cfg.samples_per_project; ++i) {
      labels.push_back(static_cast<int>((static_cast<std::size_t>(i) + p) % static_cast<std::size_t>(classes)));
    }
    rng.shuffle(labels);
    const double strength = train.count(proj.id) ? cfg.bias_strength : 0.0;
    const std::vector<int> word_of = assign_subwords(rng, labels, classes, strength);

    for (std::size_t i = 0; i < labels.size(); ++i) {
      FnWriter w(rng, proj);
      Sample s;
      char sid[32];
      std::snprintf(sid, sizeof sid, "%s-%04zu", proj.id.c_str(), i);
      s.sample_id = sid;
      s.project_id = proj.id;
      s.task = cfg.task;
      const std::string& label_word = proj.label_words[static_cast<std::size_t>(word_of[i])];
      std::string target_name;
      std::string src;
      if (cfg.task == Task::VulnDet) {
        s.vuln_label = labels[i];
        src = vuln_source(w, labels[i], label_word);
      } else {
        src = typeinf_source(w, labels[i], label_word, target_name);
        s.targets.push_back({0, labels[i]});
      }
      s.tokens = tokenize(src);
      index_sample(s, proj, target_name);
      for (std::size_t b : s.bias_token_indices) corpus.bias_vocab.insert(s.tokens[b].text);
      corpus.samples.push_back(std::move(s));
    }
  }
  return corpus;
}

}  // namespace codebias
