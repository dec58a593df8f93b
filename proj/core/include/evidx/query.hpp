#pragma once

// Predicate language over tag variables and flag bits.
//
//   query   := or
//   or      := and { "or" and }
//   and     := unary { "and" unary }
//   unary   := "not" unary | primary
//   primary := "(" query ")" | "true" | "false"
//            | "flag" "(" [GROUP ","] INDEX ")"
//            | NAME ["[" SLOT "]"] OP NUMBER
//   OP      := "<" | "<=" | ">" | ">=" | "==" | "!="
//
// Keywords and names are case-insensitive. flag(N) is shorthand for
// flag(OFFLINE, N). A comparison on a missing value is false; "not" is
// applied afterwards.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evidx/event_directory.hpp"
#include "evidx/tag_schema.hpp"

namespace evidx {

enum class CompareOp { kLt, kLe, kGt, kGe, kEq, kNe };

const char* compare_op_text(CompareOp op);

struct QueryNode {
  enum class Kind { kCompare, kFlagTest, kAnd, kOr, kNot, kTrue, kFalse };

  Kind kind = Kind::kTrue;
  // kCompare / kFlagTest: resolved schema variable and canonical name.
  std::size_t var = 0;
  std::string name;
  std::uint32_t slot = 0;  // kCompare
  CompareOp op = CompareOp::kEq;
  double literal = 0;
  std::uint32_t bit = 0;  // kFlagTest
  // Indices into QueryAST::nodes(); kNot uses only lhs.
  std::int32_t lhs = -1;
  std::int32_t rhs = -1;

  friend bool operator==(const QueryNode&, const QueryNode&) = default;
};

class QueryAST {
 public:
  // The constant-true query of the given schema.
  static QueryAST always_true(const TagSchema& schema);

  const std::vector<QueryNode>& nodes() const { return nodes_; }
  const QueryNode& root() const { return nodes_[root_]; }
  std::int32_t root_index() const { return root_; }
  const QueryNode& node(std::int32_t i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::uint64_t schema_hash() const { return schema_hash_; }

  // Fully parenthesised canonical text; parses back to an equal AST.
  std::string to_string() const;

  // Structural equality (node arena layouts may differ).
  friend bool operator==(const QueryAST& a, const QueryAST& b);

 private:
  friend class QueryParser;
  std::vector<QueryNode> nodes_;
  std::int32_t root_ = 0;
  std::uint64_t schema_hash_ = 0;
};

// Throws ParseError (syntax, with column) or Error with kUnknownName /
// kOutOfRange for names and bit indices that do not fit the schema.
QueryAST parse_query(std::string_view text, const TagSchema& schema);

// Precondition: record uses the schema the AST was parsed against.
bool evaluate(const QueryAST& ast, const TagView& record);

// Distinct variables referenced; a bit group counts once.
std::size_t count_variables(const QueryAST& ast);

// The equivalent flag expression when the query uses only OFFLINE flag
// tests and constants; nullopt otherwise.
std::optional<FlagExpr> to_flag_expr(const QueryAST& ast);

struct QueryStats {
  std::uint64_t scanned = 0;
  std::uint64_t matched = 0;
  std::size_t variables = 0;
};

// One query per non-blank line; text after '#' is a comment.
std::vector<std::string> read_query_file(const std::filesystem::path& path);
std::vector<std::string> split_query_lines(std::string_view text);

// Evaluates an AST against raw slabs with precomputed offsets. Used by the
// tag database scan loop.
class CompiledQuery {
 public:
  CompiledQuery(const QueryAST& ast, const TagSchema& schema);

  bool matches(const std::uint8_t* slab) const { return eval(root_, slab); }

 private:
  struct Op {
    QueryNode::Kind kind;
    bool is_int = false;
    CompareOp cmp = CompareOp::kEq;
    double literal = 0;
    std::uint32_t byte = 0;          // value or bit byte offset
    std::uint8_t mask = 0;           // bit mask for flag tests
    std::uint32_t presence_byte = 0;
    std::uint8_t presence_mask = 0;
    std::int32_t lhs = -1;
    std::int32_t rhs = -1;
  };

  bool eval(std::int32_t i, const std::uint8_t* slab) const;

  std::vector<Op> ops_;
  std::int32_t root_ = 0;
};

}  // namespace evidx
