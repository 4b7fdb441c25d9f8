#pragma once

// MiniLang: the small C-like language every corpus program is written in.
//
//   function := "fn" name "(" [name {"," name}] ")" block
//   block    := "{" {stmt} "}"
//   stmt     := "var" name "=" expr ";" | name "=" expr ";"
//             | "if" "(" expr ")" block ["else" block]
//             | "while" "(" expr ")" block
//             | "return" [expr] ";" | call ";"
//   expr     := binary expression over || && == != < > <= >= + - * /
//   primary  := number | string | true | false | name | call | "(" expr ")"
//   call     := (name | api) "(" [expr {"," expr}] ")"
//
// Identifiers are split into subword pieces at case and underscore
// boundaries; a multi-piece identifier is emitted as consecutive
// SubwordIdentifierPiece tokens with touching byte spans.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace codebias {

enum class TokenKind : std::uint8_t {
  Keyword,
  Identifier,
  SubwordIdentifierPiece,
  NumberLit,
  StringLit,
  BoolLit,
  Operator,
  Delimiter,
  ApiName,
};

std::string_view to_string(TokenKind kind);
TokenKind token_kind_from_string(std::string_view name);

struct Token {
  std::string text;
  TokenKind kind = TokenKind::Delimiter;
  std::size_t begin = 0;  // byte offsets into the source, [begin, end)
  std::size_t end = 0;

  bool operator==(const Token&) const = default;
};

bool is_identifier_piece(const Token& token);
bool is_literal(TokenKind kind);
bool is_api_name(std::string_view word);
bool is_keyword(std::string_view word);

// Splits an identifier at lower->Upper transitions, before the last capital
// of an acronym run followed by lowercase ("HTTPServer" -> HTTP, Server) and
// before underscores ("is_test" -> is, _test). Joining the pieces gives the
// identifier back.
std::vector<std::string> split_identifier(std::string_view identifier);

std::vector<Token> tokenize(std::string_view source);

// One occurrence of a (possibly multi-piece) identifier: token range
// [first, last) and the joined text.
struct IdentifierSpan {
  std::size_t first = 0;
  std::size_t last = 0;
  std::string text;
};

// Groups identifier pieces into whole identifiers. ApiName tokens are not
// identifiers.
std::vector<IdentifierSpan> identifier_spans(std::span<const Token> tokens);

// Recomputes byte spans after token texts changed, keeping the original
// inter-token gaps. Used when renaming identifiers.
void reflow_spans(std::vector<Token>& tokens, std::span<const Token> original);

// ---------------------------------------------------------------- AST

enum class NodeKind : std::uint8_t {
  Function,
  VarDecl,
  Assign,
  If,
  While,
  Call,
  Return,
  BinaryOp,
  Literal,
  Name,
};

std::string_view to_string(NodeKind kind);

struct AstNode {
  NodeKind kind = NodeKind::Name;
  std::vector<int> children;
  int parent = -1;
  std::size_t tok_begin = 0;  // token span [tok_begin, tok_end)
  std::size_t tok_end = 0;
  // If: number of then-branch statements following the condition child.
  int then_count = 0;
  bool has_else = false;
};

struct Ast {
  std::vector<AstNode> nodes;
  int root = -1;

  const AstNode& operator[](int i) const { return nodes[static_cast<std::size_t>(i)]; }
};

// Parses exactly one function.
Ast parse(std::span<const Token> tokens);

// Statement children of a Function, If (both branches) or While node, in
// source order.
std::vector<int> statements(const Ast& ast, int node);
std::vector<int> then_statements(const Ast& ast, int if_node);
std::vector<int> else_statements(const Ast& ast, int if_node);

// Name node carrying the declared identifier of a VarDecl, or -1.
int declaration_target(const Ast& ast, int var_decl);

// Innermost Name node whose token span contains token_index, or -1.
int name_node_at(const Ast& ast, std::size_t token_index);

// Label of a node seen from one hop away: literal text, identifier text,
// operator of a BinaryOp, callee of a Call, keyword of a statement.
std::string node_label(const Ast& ast, std::span<const Token> tokens, int node);

// Bag of token texts around a declaration target: the declaration's own
// tokens ("var", "=", ";") plus the label of each sibling, excluding the
// declared name. Throws NotADeclaration unless node is a VarDecl target.
std::map<std::string, int> ast_one_hop(const Ast& ast, std::span<const Token> tokens, int node);

// ---------------------------------------------------------------- CFG

enum class StmtKind : std::uint8_t {
  VarDecl,
  Assign,
  Call,
  Return,
  IfCond,
  WhileCond,
  Malloc,
  Free,
  Lock,
  Unlock,
};
inline constexpr std::size_t kNumStmtKinds = 10;

std::string_view to_string(StmtKind kind);

struct StmtDesc {
  StmtKind kind = StmtKind::Call;
  int node = -1;

  bool operator==(const StmtDesc&) const = default;
};

struct BasicBlock {
  std::vector<StmtDesc> stmts;

  bool operator==(const BasicBlock&) const = default;
};

struct Cfg {
  std::vector<BasicBlock> blocks;
  std::vector<std::pair<int, int>> edges;
  int entry = 0;
  int exit = 0;

  bool operator==(const Cfg&) const = default;
};

// Blocks split at if/while: an if yields cond/then/[else]/join blocks, a while
// yields cond/body/post blocks with a body->cond back edge. Statements that
// call one of the memory or lock APIs are classified by that API.
Cfg build_cfg(const Ast& ast, std::span<const Token> tokens);

}  // namespace codebias
