#include "codebias/lang.hpp"

#include "codebias/errors.hpp"

namespace codebias {

std::string_view to_string(StmtKind kind) {
  switch (kind) {
    case StmtKind::VarDecl: return "VarDecl";
    case StmtKind::Assign: return "Assign";
    case StmtKind::Call: return "Call";
    case StmtKind::Return: return "Return";
    case StmtKind::IfCond: return "IfCond";
    case StmtKind::WhileCond: return "WhileCond";
    case StmtKind::Malloc: return "Malloc";
    case StmtKind::Free: return "Free";
    case StmtKind::Lock: return "Lock";
    case StmtKind::Unlock: return "Unlock";
  }
  return "?";
}

namespace {

// First API call in pre-order below node, or empty.
std::string_view first_api_call(const Ast& ast, std::span<const Token> tokens, int node) {
  const AstNode& n = ast[node];
  if (n.kind == NodeKind::Call) {
    const AstNode& callee = ast[n.children.front()];
    const Token& t = tokens[callee.tok_begin];
    if (t.kind == TokenKind::ApiName) return t.text;
  }
  for (int c : n.children) {
    auto api = first_api_call(ast, tokens, c);
    if (!api.empty()) return api;
  }
  return {};
}

StmtKind classify(const Ast& ast, std::span<const Token> tokens, int node) {
  const auto api = first_api_call(ast, tokens, node);
  if (api == "malloc") return StmtKind::Malloc;
  if (api == "free") return StmtKind::Free;
  if (api == "lock") return StmtKind::Lock;
  if (api == "unlock") return StmtKind::Unlock;
  switch (ast[node].kind) {
    case NodeKind::VarDecl: return StmtKind::VarDecl;
    case NodeKind::Assign: return StmtKind::Assign;
    case NodeKind::Return: return StmtKind::Return;
    default: return StmtKind::Call;
  }
}

class CfgBuilder {
 public:
  CfgBuilder(const Ast& ast, std::span<const Token> tokens) : ast_(ast), tokens_(tokens) {}

  Cfg run() {
    const int entry = new_block();
    const int last = lower(statements(ast_, ast_.root), entry);
    cfg_.entry = entry;
    cfg_.exit = last;
    return std::move(cfg_);
  }

 private:
  const Ast& ast_;
  std::span<const Token> tokens_;
  Cfg cfg_;

  int new_block() {
    cfg_.blocks.emplace_back();
    return static_cast<int>(cfg_.blocks.size()) - 1;
  }
  void edge(int from, int to) { cfg_.edges.emplace_back(from, to); }
  void push(int block, StmtKind kind, int node) {
    cfg_.blocks[static_cast<std::size_t>(block)].stmts.push_back({kind, node});
  }

  // Appends stmts starting in block cur; returns the block control falls out of.
  int lower(const std::vector<int>& stmts, int cur) {
    for (int s : stmts) {
      const AstNode& n = ast_[s];
      if (n.kind == NodeKind::If) {
        push(cur, StmtKind::IfCond, s);
        const int then_b = new_block();
        edge(cur, then_b);
        const int then_end = lower(then_statements(ast_, s), then_b);
        int else_end = -1;
        if (n.has_else) {
          const int else_b = new_block();
          edge(cur, else_b);
          else_end = lower(else_statements(ast_, s), else_b);
        }
        const int join = new_block();
        edge(then_end, join);
        if (n.has_else) {
          edge(else_end, join);
        } else {
          edge(cur, join);
        }
        cur = join;
      } else if (n.kind == NodeKind::While) {
        const int cond = new_block();
        edge(cur, cond);
        push(cond, StmtKind::WhileCond, s);
        const int body = new_block();
        edge(cond, body);
        const int body_end = lower(statements(ast_, s), body);
        edge(body_end, cond);
        const int post = new_block();
        edge(cond, post);
        cur = post;
      } else {
        push(cur, classify(ast_, tokens_, s), s);
      }
    }
    return cur;
  }
};

}  // namespace

Cfg build_cfg(const Ast& ast, std::span<const Token> tokens) {
  if (ast.root < 0 || ast[ast.root].kind != NodeKind::Function) {
    throw InvalidArgument("build_cfg expects a single function");
  }
  return CfgBuilder(ast, tokens).run();
}

}  // namespace codebias
