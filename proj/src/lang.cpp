#include "codebias/lang.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "codebias/errors.hpp"

namespace codebias {

namespace {

constexpr std::array<std::string_view, 6> kKeywords = {"fn", "var", "if", "else", "while", "return"};
constexpr std::array<std::string_view, 4> kApiNames = {"malloc", "free", "lock", "unlock"};
constexpr std::array<std::string_view, 6> kTwoCharOps = {"==", "!=", "<=", ">=", "&&", "||"};
constexpr std::string_view kOneCharOps = "=<>+-*/";
constexpr std::string_view kDelimiters = "(){},;";

bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string join_texts(std::span<const Token> tokens, std::size_t first, std::size_t last) {
  std::string out;
  for (std::size_t i = first; i < last; ++i) out += tokens[i].text;
  return out;
}

}  // namespace

ParseError::ParseError(std::size_t token_index, std::vector<std::string> expected)
    : Error([&] {
        std::string msg = "parse error at token " + std::to_string(token_index) + ", expected one of:";
        for (const auto& e : expected) msg += " '" + e + "'";
        return msg;
      }()),
      token_index_(token_index),
      expected_(std::move(expected)) {}

std::string_view to_string(TokenKind kind) {
  switch (kind) {
    case TokenKind::Keyword: return "Keyword";
    case TokenKind::Identifier: return "Identifier";
    case TokenKind::SubwordIdentifierPiece: return "SubwordIdentifierPiece";
    case TokenKind::NumberLit: return "NumberLit";
    case TokenKind::StringLit: return "StringLit";
    case TokenKind::BoolLit: return "BoolLit";
    case TokenKind::Operator: return "Operator";
    case TokenKind::Delimiter: return "Delimiter";
    case TokenKind::ApiName: return "ApiName";
  }
  return "?";
}

TokenKind token_kind_from_string(std::string_view name) {
  for (auto k : {TokenKind::Keyword, TokenKind::Identifier, TokenKind::SubwordIdentifierPiece,
                 TokenKind::NumberLit, TokenKind::StringLit, TokenKind::BoolLit, TokenKind::Operator,
                 TokenKind::Delimiter, TokenKind::ApiName}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown token kind '" + std::string(name) + "'");
}

bool is_identifier_piece(const Token& token) {
  return token.kind == TokenKind::Identifier || token.kind == TokenKind::SubwordIdentifierPiece;
}

bool is_literal(TokenKind kind) {
  return kind == TokenKind::NumberLit || kind == TokenKind::StringLit || kind == TokenKind::BoolLit;
}

bool is_api_name(std::string_view word) {
  return std::find(kApiNames.begin(), kApiNames.end(), word) != kApiNames.end();
}

bool is_keyword(std::string_view word) {
  return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

std::vector<std::string> split_identifier(std::string_view id) {
  std::vector<std::string> pieces;
  std::size_t start = 0;
  for (std::size_t i = 1; i < id.size(); ++i) {
    const char prev = id[i - 1];
    const char c = id[i];
    bool cut = false;
    if (c == '_') {
      cut = prev != '_';
    } else if (is_upper(c)) {
      if (is_lower(prev) || is_digit(prev)) {
        cut = true;
      } else if (is_upper(prev) && i + 1 < id.size() && is_lower(id[i + 1])) {
        cut = true;
      }
    }
    if (cut) {
      pieces.emplace_back(id.substr(start, i - start));
      start = i;
    }
  }
  if (start < id.size()) pieces.emplace_back(id.substr(start));
  return pieces;
}

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    if (is_ident_start(c)) {
      std::size_t j = i;
      while (j < src.size() && is_ident_char(src[j])) ++j;
      const std::string_view word = src.substr(i, j - i);
      if (is_keyword(word)) {
        out.push_back({std::string(word), TokenKind::Keyword, i, j});
      } else if (word == "true" || word == "false") {
        out.push_back({std::string(word), TokenKind::BoolLit, i, j});
      } else if (is_api_name(word)) {
        out.push_back({std::string(word), TokenKind::ApiName, i, j});
      } else {
        auto pieces = split_identifier(word);
        if (pieces.size() == 1) {
          out.push_back({std::move(pieces[0]), TokenKind::Identifier, i, j});
        } else {
          std::size_t at = i;
          for (auto& p : pieces) {
            const std::size_t len = p.size();
            out.push_back({std::move(p), TokenKind::SubwordIdentifierPiece, at, at + len});
            at += len;
          }
        }
      }
      i = j;
      continue;
    }
    if (is_digit(c)) {
      std::size_t j = i;
      while (j < src.size() && is_digit(src[j])) ++j;
      if (j + 1 < src.size() && src[j] == '.' && is_digit(src[j + 1])) {
        ++j;
        while (j < src.size() && is_digit(src[j])) ++j;
      }
      out.push_back({std::string(src.substr(i, j - i)), TokenKind::NumberLit, i, j});
      i = j;
      continue;
    }
    if (c == '"') {
      std::size_t j = i + 1;
      while (j < src.size() && src[j] != '"') {
        const auto u = static_cast<unsigned char>(src[j]);
        if (u < 0x20 || u > 0x7e) throw LexError(j, "invalid character inside string literal");
        ++j;
      }
      if (j >= src.size()) throw LexError(i, "unterminated string literal");
      out.push_back({std::string(src.substr(i, j + 1 - i)), TokenKind::StringLit, i, j + 1});
      i = j + 1;
      continue;
    }
    if (i + 1 < src.size()) {
      const std::string_view two = src.substr(i, 2);
      if (std::find(kTwoCharOps.begin(), kTwoCharOps.end(), two) != kTwoCharOps.end()) {
        out.push_back({std::string(two), TokenKind::Operator, i, i + 2});
        i += 2;
        continue;
      }
    }
    if (kOneCharOps.find(c) != std::string_view::npos) {
      out.push_back({std::string(1, c), TokenKind::Operator, i, i + 1});
      ++i;
      continue;
    }
    if (kDelimiters.find(c) != std::string_view::npos) {
      out.push_back({std::string(1, c), TokenKind::Delimiter, i, i + 1});
      ++i;
      continue;
    }
    throw LexError(i, "character outside the MiniLang alphabet");
  }
  return out;
}

std::vector<IdentifierSpan> identifier_spans(std::span<const Token> tokens) {
  std::vector<IdentifierSpan> spans;
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (tokens[i].kind == TokenKind::Identifier) {
      spans.push_back({i, i + 1, tokens[i].text});
      ++i;
    } else if (tokens[i].kind == TokenKind::SubwordIdentifierPiece) {
      std::size_t j = i + 1;
      while (j < tokens.size() && tokens[j].kind == TokenKind::SubwordIdentifierPiece &&
             tokens[j].begin == tokens[j - 1].end) {
        ++j;
      }
      spans.push_back({i, j, join_texts(tokens, i, j)});
      i = j;
    } else {
      ++i;
    }
  }
  return spans;
}

void reflow_spans(std::vector<Token>& tokens, std::span<const Token> original) {
  if (tokens.size() != original.size()) throw Misalignment("reflow_spans: token count changed");
  std::size_t at = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t gap = i == 0 ? original[0].begin : original[i].begin - original[i - 1].end;
    tokens[i].begin = at + gap;
    tokens[i].end = tokens[i].begin + tokens[i].text.size();
    at = tokens[i].end;
  }
}

// ---------------------------------------------------------------- parser

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::Function: return "Function";
    case NodeKind::VarDecl: return "VarDecl";
    case NodeKind::Assign: return "Assign";
    case NodeKind::If: return "If";
    case NodeKind::While: return "While";
    case NodeKind::Call: return "Call";
    case NodeKind::Return: return "Return";
    case NodeKind::BinaryOp: return "BinaryOp";
    case NodeKind::Literal: return "Literal";
    case NodeKind::Name: return "Name";
  }
  return "?";
}

namespace {

// Result of parsing an expression: the node plus its syntactic extent, which
// may be wider than the node's span when the expression is parenthesized.
struct Parsed {
  int node;
  std::size_t begin;
  std::size_t end;
};

class Parser {
 public:
  explicit Parser(std::span<const Token> tokens) : toks_(tokens) {}

  Ast run() {
    const int fn = function();
    if (pos_ != toks_.size()) fail({"<end of input>"});
    ast_.root = fn;
    return std::move(ast_);
  }

 private:
  std::span<const Token> toks_;
  std::size_t pos_ = 0;
  Ast ast_;

  [[noreturn]] void fail(std::vector<std::string> expected) const { throw ParseError(pos_, std::move(expected)); }

  bool at_end() const { return pos_ >= toks_.size(); }
  const Token* peek(std::size_t ahead = 0) const {
    return pos_ + ahead < toks_.size() ? &toks_[pos_ + ahead] : nullptr;
  }
  bool peek_is(std::string_view text, std::size_t ahead = 0) const {
    const Token* t = peek(ahead);
    return t != nullptr && t->text == text &&
           (t->kind == TokenKind::Delimiter || t->kind == TokenKind::Operator || t->kind == TokenKind::Keyword);
  }
  void expect(std::string_view text) {
    if (!peek_is(text)) fail({std::string(text)});
    ++pos_;
  }

  int add(NodeKind kind, std::size_t begin) {
    AstNode n;
    n.kind = kind;
    n.tok_begin = begin;
    ast_.nodes.push_back(std::move(n));
    return static_cast<int>(ast_.nodes.size()) - 1;
  }
  void attach(int parent, int child) {
    ast_.nodes[static_cast<std::size_t>(parent)].children.push_back(child);
    ast_.nodes[static_cast<std::size_t>(child)].parent = parent;
  }
  void close(int node) { ast_.nodes[static_cast<std::size_t>(node)].tok_end = pos_; }

  bool at_name() const { const Token* t = peek(); return t != nullptr && is_identifier_piece(*t); }

  int name() {
    if (!at_name()) fail({"identifier"});
    const int n = add(NodeKind::Name, pos_);
    if (toks_[pos_].kind == TokenKind::Identifier) {
      ++pos_;
    } else {
      ++pos_;
      while (!at_end() && toks_[pos_].kind == TokenKind::SubwordIdentifierPiece &&
             toks_[pos_].begin == toks_[pos_ - 1].end) {
        ++pos_;
      }
    }
    close(n);
    return n;
  }

  int function() {
    const int fn = add(NodeKind::Function, pos_);
    expect("fn");
    attach(fn, name());
    expect("(");
    if (!peek_is(")")) {
      attach(fn, name());
      while (peek_is(",")) {
        ++pos_;
        attach(fn, name());
      }
    }
    expect(")");
    block(fn);
    close(fn);
    return fn;
  }

  // Parses "{ stmt* }" appending statements to parent; returns the count.
  int block(int parent) {
    expect("{");
    int count = 0;
    while (!peek_is("}")) {
      if (at_end()) fail({"}"});
      attach(parent, statement());
      ++count;
    }
    ++pos_;
    return count;
  }

  int statement() {
    const Token* t = peek();
    if (t == nullptr) fail({"statement"});
    if (t->kind == TokenKind::Keyword) {
      if (t->text == "var") {
        const int n = add(NodeKind::VarDecl, pos_);
        ++pos_;
        attach(n, name());
        expect("=");
        attach(n, expression().node);
        expect(";");
        close(n);
        return n;
      }
      if (t->text == "if") {
        const int n = add(NodeKind::If, pos_);
        ++pos_;
        expect("(");
        attach(n, expression().node);
        expect(")");
        const int then_count = block(n);
        ast_.nodes[static_cast<std::size_t>(n)].then_count = then_count;
        if (peek_is("else")) {
          ++pos_;
          block(n);
          ast_.nodes[static_cast<std::size_t>(n)].has_else = true;
        }
        close(n);
        return n;
      }
      if (t->text == "while") {
        const int n = add(NodeKind::While, pos_);
        ++pos_;
        expect("(");
        attach(n, expression().node);
        expect(")");
        block(n);
        close(n);
        return n;
      }
      if (t->text == "return") {
        const int n = add(NodeKind::Return, pos_);
        ++pos_;
        if (!peek_is(";")) attach(n, expression().node);
        expect(";");
        close(n);
        return n;
      }
    }
    if (t->kind == TokenKind::ApiName) {
      const Parsed c = call_expr();
      expect(";");
      return c.node;
    }
    if (is_identifier_piece(*t)) {
      // Look past the (possibly multi-piece) name.
      std::size_t j = pos_ + 1;
      if (t->kind == TokenKind::SubwordIdentifierPiece) {
        while (j < toks_.size() && toks_[j].kind == TokenKind::SubwordIdentifierPiece &&
               toks_[j].begin == toks_[j - 1].end) {
          ++j;
        }
      }
      const Token* after = j < toks_.size() ? &toks_[j] : nullptr;
      if (after != nullptr && after->kind == TokenKind::Operator && after->text == "=") {
        const int n = add(NodeKind::Assign, pos_);
        attach(n, name());
        expect("=");
        attach(n, expression().node);
        expect(";");
        close(n);
        return n;
      }
      if (after != nullptr && after->kind == TokenKind::Delimiter && after->text == "(") {
        const Parsed c = call_expr();
        expect(";");
        return c.node;
      }
      pos_ = j;
      fail({"=", "("});
    }
    fail({"var", "if", "while", "return", "identifier", "}"});
  }

  Parsed call_expr() {
    const std::size_t begin = pos_;
    const int n = add(NodeKind::Call, begin);
    if (!at_end() && toks_[pos_].kind == TokenKind::ApiName) {
      const int callee = add(NodeKind::Name, pos_);
      ++pos_;
      close(callee);
      attach(n, callee);
    } else {
      attach(n, name());
    }
    expect("(");
    if (!peek_is(")")) {
      attach(n, expression().node);
      while (peek_is(",")) {
        ++pos_;
        attach(n, expression().node);
      }
    }
    expect(")");
    close(n);
    return {n, begin, pos_};
  }

  static int precedence(const Token& t) {
    if (t.kind != TokenKind::Operator) return -1;
    const std::string& s = t.text;
    if (s == "||") return 0;
    if (s == "&&") return 1;
    if (s == "==" || s == "!=") return 2;
    if (s == "<" || s == ">" || s == "<=" || s == ">=") return 3;
    if (s == "+" || s == "-") return 4;
    if (s == "*" || s == "/") return 5;
    return -1;
  }

  Parsed expression(int min_prec = 0) {
    Parsed lhs = primary();
    for (;;) {
      const Token* t = peek();
      if (t == nullptr) break;
      const int prec = precedence(*t);
      if (prec < min_prec) break;
      ++pos_;
      Parsed rhs = expression(prec + 1);
      const int n = add(NodeKind::BinaryOp, lhs.begin);
      attach(n, lhs.node);
      attach(n, rhs.node);
      ast_.nodes[static_cast<std::size_t>(n)].tok_end = rhs.end;
      lhs = {n, lhs.begin, rhs.end};
    }
    return lhs;
  }

  Parsed primary() {
    const Token* t = peek();
    if (t == nullptr) fail({"expression"});
    if (is_literal(t->kind)) {
      const int n = add(NodeKind::Literal, pos_);
      ++pos_;
      close(n);
      return {n, pos_ - 1, pos_};
    }
    if (t->kind == TokenKind::ApiName) return call_expr();
    if (is_identifier_piece(*t)) {
      std::size_t j = pos_ + 1;
      if (t->kind == TokenKind::SubwordIdentifierPiece) {
        while (j < toks_.size() && toks_[j].kind == TokenKind::SubwordIdentifierPiece &&
               toks_[j].begin == toks_[j - 1].end) {
          ++j;
        }
      }
      if (j < toks_.size() && toks_[j].kind == TokenKind::Delimiter && toks_[j].text == "(") return call_expr();
      const std::size_t begin = pos_;
      const int n = name();
      return {n, begin, pos_};
    }
    if (peek_is("(")) {
      const std::size_t begin = pos_;
      ++pos_;
      Parsed inner = expression();
      expect(")");
      return {inner.node, begin, pos_};
    }
    fail({"expression"});
  }
};

bool covered_by_child(const Ast& ast, const AstNode& n, std::size_t tok) {
  for (int c : n.children) {
    const AstNode& cn = ast[c];
    if (tok >= cn.tok_begin && tok < cn.tok_end) return true;
  }
  return false;
}

}  // namespace

Ast parse(std::span<const Token> tokens) { return Parser(tokens).run(); }

std::vector<int> statements(const Ast& ast, int node) {
  const AstNode& n = ast[node];
  std::vector<int> out;
  switch (n.kind) {
    case NodeKind::Function:
      for (int c : n.children) {
        if (ast[c].kind != NodeKind::Name) out.push_back(c);
      }
      break;
    case NodeKind::If:
    case NodeKind::While:
      out.assign(n.children.begin() + 1, n.children.end());
      break;
    default:
      break;
  }
  return out;
}

std::vector<int> then_statements(const Ast& ast, int if_node) {
  const AstNode& n = ast[if_node];
  return {n.children.begin() + 1, n.children.begin() + 1 + n.then_count};
}

std::vector<int> else_statements(const Ast& ast, int if_node) {
  const AstNode& n = ast[if_node];
  return {n.children.begin() + 1 + n.then_count, n.children.end()};
}

int declaration_target(const Ast& ast, int var_decl) {
  const AstNode& n = ast[var_decl];
  if (n.kind != NodeKind::VarDecl || n.children.empty()) return -1;
  return ast[n.children[0]].kind == NodeKind::Name ? n.children[0] : -1;
}

int name_node_at(const Ast& ast, std::size_t token_index) {
  for (std::size_t i = 0; i < ast.nodes.size(); ++i) {
    const AstNode& n = ast.nodes[i];
    if (n.kind == NodeKind::Name && token_index >= n.tok_begin && token_index < n.tok_end) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

std::string node_label(const Ast& ast, std::span<const Token> tokens, int node) {
  const AstNode& n = ast[node];
  switch (n.kind) {
    case NodeKind::Literal:
    case NodeKind::Name:
      return join_texts(tokens, n.tok_begin, n.tok_end);
    case NodeKind::BinaryOp:
      for (std::size_t t = n.tok_begin; t < n.tok_end; ++t) {
        if (tokens[t].kind == TokenKind::Operator && !covered_by_child(ast, n, t)) return tokens[t].text;
      }
      return "?";
    case NodeKind::Call:
      return node_label(ast, tokens, n.children.front());
    default:
      return tokens[n.tok_begin].text;
  }
}

std::map<std::string, int> ast_one_hop(const Ast& ast, std::span<const Token> tokens, int node) {
  if (node < 0 || static_cast<std::size_t>(node) >= ast.nodes.size()) {
    throw NotADeclaration("node index out of range");
  }
  const AstNode& n = ast[node];
  if (n.kind != NodeKind::Name || n.parent < 0 || declaration_target(ast, n.parent) != node) {
    throw NotADeclaration("node " + std::to_string(node) + " is not a declaration target");
  }
  const AstNode& decl = ast[n.parent];
  std::map<std::string, int> bag;
  for (std::size_t t = decl.tok_begin; t < decl.tok_end; ++t) {
    if (!covered_by_child(ast, decl, t)) ++bag[tokens[t].text];
  }
  for (int sib : decl.children) {
    if (sib != node) ++bag[node_label(ast, tokens, sib)];
  }
  return bag;
}

}  // namespace codebias
