#include "evidx/query.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <functional>
#include <set>

#include "le.hpp"
#include "posix_file.hpp"

namespace evidx {

const char* compare_op_text(CompareOp op) {
  switch (op) {
    case CompareOp::kLt: return "<";
    case CompareOp::kLe: return "<=";
    case CompareOp::kGt: return ">";
    case CompareOp::kGe: return ">=";
    case CompareOp::kEq: return "==";
    case CompareOp::kNe: return "!=";
  }
  return "?";
}

namespace {

bool compare(double lhs, CompareOp op, double rhs) {
  switch (op) {
    case CompareOp::kLt: return lhs < rhs;
    case CompareOp::kLe: return lhs <= rhs;
    case CompareOp::kGt: return lhs > rhs;
    case CompareOp::kGe: return lhs >= rhs;
    case CompareOp::kEq: return lhs == rhs;
    case CompareOp::kNe: return lhs != rhs;
  }
  return false;
}

// Shortest text that reads back to the same double.
std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

enum class Tok { kIdent, kNumber, kOp, kLParen, kRParen, kLBracket, kRBracket, kComma, kEnd };

struct Token {
  Tok kind = Tok::kEnd;
  std::string text;
  double number = 0;
  CompareOp op = CompareOp::kEq;
  std::size_t column = 1;
};

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto is_ident_start = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; };
  auto is_ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
  auto is_num_start = [&](std::size_t k) {
    char c = text[k];
    if (std::isdigit(static_cast<unsigned char>(c))) return true;
    if (c == '.' && k + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[k + 1]))) return true;
    return false;
  };
  while (i < text.size()) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    Token t;
    t.column = i + 1;
    if (is_ident_start(c)) {
      std::size_t s = i;
      while (i < text.size() && is_ident(text[i])) ++i;
      t.kind = Tok::kIdent;
      t.text = std::string(text.substr(s, i - s));
    } else if (is_num_start(i) ||
               ((c == '-' || c == '+') && i + 1 < text.size() && is_num_start(i + 1))) {
      std::size_t s = i;
      if (c == '-' || c == '+') ++i;
      while (i < text.size() &&
             (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.')) {
        ++i;
      }
      if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
        std::size_t e = i + 1;
        if (e < text.size() && (text[e] == '+' || text[e] == '-')) ++e;
        if (e < text.size() && std::isdigit(static_cast<unsigned char>(text[e]))) {
          i = e;
          while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) ++i;
        }
      }
      t.kind = Tok::kNumber;
      t.text = std::string(text.substr(s, i - s));
      const char* b = t.text.data() + (t.text[0] == '+' ? 1 : 0);
      auto [p, ec] = std::from_chars(b, t.text.data() + t.text.size(), t.number);
      if (ec != std::errc() || p != t.text.data() + t.text.size()) {
        throw ParseError("malformed number '" + t.text + "'", 1, t.column);
      }
    } else if (c == '(') {
      t.kind = Tok::kLParen;
      ++i;
    } else if (c == ')') {
      t.kind = Tok::kRParen;
      ++i;
    } else if (c == '[') {
      t.kind = Tok::kLBracket;
      ++i;
    } else if (c == ']') {
      t.kind = Tok::kRBracket;
      ++i;
    } else if (c == ',') {
      t.kind = Tok::kComma;
      ++i;
    } else if (c == '<' || c == '>' || c == '=' || c == '!') {
      char n = i + 1 < text.size() ? text[i + 1] : '\0';
      t.kind = Tok::kOp;
      if (c == '<' && n == '=') { t.op = CompareOp::kLe; i += 2; }
      else if (c == '>' && n == '=') { t.op = CompareOp::kGe; i += 2; }
      else if (c == '=' && n == '=') { t.op = CompareOp::kEq; i += 2; }
      else if (c == '!' && n == '=') { t.op = CompareOp::kNe; i += 2; }
      else if (c == '<') { t.op = CompareOp::kLt; i += 1; }
      else if (c == '>') { t.op = CompareOp::kGt; i += 1; }
      else throw ParseError(std::string("unknown operator '") + c + "'", 1, t.column);
      t.text = compare_op_text(t.op);
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", 1, t.column);
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.column = text.size() + 1;
  out.push_back(end);
  return out;
}

}  // namespace

class QueryParser {
 public:
  QueryParser(std::string_view text, const TagSchema& schema)
      : tokens_(tokenize(text)), schema_(schema) {}

  QueryAST parse() {
    ast_.schema_hash_ = schema_.hash();
    ast_.root_ = parse_or();
    if (peek().kind != Tok::kEnd) fail("unexpected '" + describe(peek()) + "'");
    return std::move(ast_);
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& take() { return tokens_[pos_++]; }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Tok::kEnd: return "end of query";
      case Tok::kLParen: return "(";
      case Tok::kRParen: return ")";
      case Tok::kLBracket: return "[";
      case Tok::kRBracket: return "]";
      case Tok::kComma: return ",";
      default: return t.text;
    }
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, 1, peek().column);
  }

  bool keyword(const char* kw) const {
    return peek().kind == Tok::kIdent && lower(peek().text) == kw;
  }

  void expect(Tok kind, const char* what) {
    if (peek().kind != kind) fail(std::string("expected ") + what + ", found '" + describe(peek()) + "'");
    ++pos_;
  }

  std::int32_t add(QueryNode n) {
    ast_.nodes_.push_back(std::move(n));
    return static_cast<std::int32_t>(ast_.nodes_.size() - 1);
  }

  std::int32_t binary(QueryNode::Kind kind, std::int32_t a, std::int32_t b) {
    QueryNode n;
    n.kind = kind;
    n.lhs = a;
    n.rhs = b;
    return add(std::move(n));
  }

  std::int32_t parse_or() {
    std::int32_t left = parse_and();
    while (keyword("or")) {
      ++pos_;
      left = binary(QueryNode::Kind::kOr, left, parse_and());
    }
    return left;
  }

  std::int32_t parse_and() {
    std::int32_t left = parse_unary();
    while (keyword("and")) {
      ++pos_;
      left = binary(QueryNode::Kind::kAnd, left, parse_unary());
    }
    return left;
  }

  std::int32_t parse_unary() {
    if (keyword("not")) {
      ++pos_;
      QueryNode n;
      n.kind = QueryNode::Kind::kNot;
      n.lhs = parse_unary();
      return add(std::move(n));
    }
    return parse_primary();
  }

  std::uint64_t parse_index(const char* what) {
    const Token& t = peek();
    if (t.kind != Tok::kNumber || t.text.find_first_not_of("0123456789") != std::string::npos) {
      fail(std::string("expected ") + what);
    }
    ++pos_;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc()) throw Error(Errc::kOutOfRange, std::string(what) + " too large: " + t.text);
    return v;
  }

  std::int32_t parse_primary() {
    if (peek().kind == Tok::kLParen) {
      ++pos_;
      std::int32_t inner = parse_or();
      expect(Tok::kRParen, "')'");
      return inner;
    }
    if (keyword("true") || keyword("false")) {
      QueryNode n;
      n.kind = keyword("true") ? QueryNode::Kind::kTrue : QueryNode::Kind::kFalse;
      ++pos_;
      return add(std::move(n));
    }
    if (keyword("flag") && tokens_[pos_ + 1].kind == Tok::kLParen) {
      return parse_flag();
    }
    if (peek().kind == Tok::kIdent) return parse_compare();
    fail("expected a comparison, flag test, 'true', 'false', 'not' or '(' but found '" +
         describe(peek()) + "'");
  }

  std::int32_t parse_flag() {
    pos_ += 2;  // flag (
    std::string group = kOfflineGroup;
    if (peek().kind == Tok::kIdent) {
      group = take().text;
      expect(Tok::kComma, "','");
    }
    std::size_t index_column = peek().column;
    std::uint64_t bit = parse_index("bit index");
    expect(Tok::kRParen, "')'");

    auto var = schema_.find(group);
    if (!var) throw Error(Errc::kUnknownName, "no bit group '" + group + "' in schema");
    const VariableInfo& info = schema_.at(*var);
    if (info.scalar()) {
      throw Error(Errc::kUnknownName, "'" + info.desc.name + "' is not a bit group");
    }
    if (bit >= info.desc.width) {
      throw Error(Errc::kOutOfRange, "bit index " + std::to_string(bit) + " at column " +
                                         std::to_string(index_column) + " outside " +
                                         info.desc.name + " (0.." +
                                         std::to_string(info.desc.width - 1) + ")");
    }
    QueryNode n;
    n.kind = QueryNode::Kind::kFlagTest;
    n.var = *var;
    n.name = info.desc.name;
    n.bit = static_cast<std::uint32_t>(bit);
    return add(std::move(n));
  }

  std::int32_t parse_compare() {
    const Token name = take();
    auto var = schema_.find(name.text);
    if (!var) {
      throw Error(Errc::kUnknownName, "no variable '" + name.text + "' in schema (column " +
                                          std::to_string(name.column) + ")");
    }
    const VariableInfo& info = schema_.at(*var);
    if (!info.scalar()) {
      throw Error(Errc::kUnknownName, "'" + info.desc.name +
                                          "' is a bit group; use flag(" + info.desc.name + ", N)");
    }
    std::uint64_t slot = 0;
    if (peek().kind == Tok::kLBracket) {
      ++pos_;
      slot = parse_index("slot index");
      expect(Tok::kRBracket, "']'");
      if (slot >= info.desc.width) {
        throw Error(Errc::kOutOfRange, "slot " + std::to_string(slot) + " outside " + info.desc.name);
      }
    }
    if (peek().kind != Tok::kOp) fail("expected a comparison operator after " + name.text);
    CompareOp op = take().op;
    if (peek().kind != Tok::kNumber) fail("expected a number after " + std::string(compare_op_text(op)));
    double literal = take().number;

    QueryNode n;
    n.kind = QueryNode::Kind::kCompare;
    n.var = *var;
    n.name = info.desc.name;
    n.slot = static_cast<std::uint32_t>(slot);
    n.op = op;
    n.literal = literal;
    return add(std::move(n));
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  const TagSchema& schema_;
  QueryAST ast_;
};

QueryAST QueryAST::always_true(const TagSchema& schema) {
  QueryAST ast;
  ast.nodes_.push_back(QueryNode{});
  ast.root_ = 0;
  ast.schema_hash_ = schema.hash();
  return ast;
}

namespace {

std::string node_text(const QueryAST& ast, std::int32_t i) {
  const QueryNode& n = ast.node(i);
  switch (n.kind) {
    case QueryNode::Kind::kTrue: return "true";
    case QueryNode::Kind::kFalse: return "false";
    case QueryNode::Kind::kCompare: {
      std::string s = n.name;
      if (n.slot != 0) s += "[" + std::to_string(n.slot) + "]";
      return s + " " + compare_op_text(n.op) + " " + format_number(n.literal);
    }
    case QueryNode::Kind::kFlagTest:
      return "flag(" + n.name + ", " + std::to_string(n.bit) + ")";
    case QueryNode::Kind::kAnd:
      return "(" + node_text(ast, n.lhs) + " and " + node_text(ast, n.rhs) + ")";
    case QueryNode::Kind::kOr:
      return "(" + node_text(ast, n.lhs) + " or " + node_text(ast, n.rhs) + ")";
    case QueryNode::Kind::kNot: return "not " + node_text(ast, n.lhs);
  }
  return {};
}

bool same_tree(const QueryAST& a, std::int32_t i, const QueryAST& b, std::int32_t j) {
  const QueryNode& x = a.node(i);
  const QueryNode& y = b.node(j);
  if (x.kind != y.kind) return false;
  switch (x.kind) {
    case QueryNode::Kind::kTrue:
    case QueryNode::Kind::kFalse: return true;
    case QueryNode::Kind::kCompare:
      return x.var == y.var && x.slot == y.slot && x.op == y.op && x.literal == y.literal;
    case QueryNode::Kind::kFlagTest: return x.var == y.var && x.bit == y.bit;
    case QueryNode::Kind::kNot: return same_tree(a, x.lhs, b, y.lhs);
    case QueryNode::Kind::kAnd:
    case QueryNode::Kind::kOr:
      return same_tree(a, x.lhs, b, y.lhs) && same_tree(a, x.rhs, b, y.rhs);
  }
  return false;
}

bool eval_view(const QueryAST& ast, std::int32_t i, const TagView& rec) {
  const QueryNode& n = ast.node(i);
  switch (n.kind) {
    case QueryNode::Kind::kTrue: return true;
    case QueryNode::Kind::kFalse: return false;
    case QueryNode::Kind::kCompare: {
      auto v = rec.value(n.var, n.slot);
      return v && compare(*v, n.op, n.literal);
    }
    case QueryNode::Kind::kFlagTest: return rec.bit(n.var, n.bit);
    case QueryNode::Kind::kAnd: return eval_view(ast, n.lhs, rec) && eval_view(ast, n.rhs, rec);
    case QueryNode::Kind::kOr: return eval_view(ast, n.lhs, rec) || eval_view(ast, n.rhs, rec);
    case QueryNode::Kind::kNot: return !eval_view(ast, n.lhs, rec);
  }
  return false;
}

std::optional<FlagExpr> flag_expr_of(const QueryAST& ast, std::int32_t i) {
  const QueryNode& n = ast.node(i);
  switch (n.kind) {
    case QueryNode::Kind::kTrue: return FlagExpr::constant(true);
    case QueryNode::Kind::kFalse: return FlagExpr::constant(false);
    case QueryNode::Kind::kCompare: return std::nullopt;
    case QueryNode::Kind::kFlagTest:
      if (n.name != kOfflineGroup) return std::nullopt;
      return FlagExpr::flag(n.bit);
    case QueryNode::Kind::kNot: {
      auto a = flag_expr_of(ast, n.lhs);
      if (!a) return std::nullopt;
      return !*a;
    }
    case QueryNode::Kind::kAnd:
    case QueryNode::Kind::kOr: {
      auto a = flag_expr_of(ast, n.lhs);
      if (!a) return std::nullopt;
      auto b = flag_expr_of(ast, n.rhs);
      if (!b) return std::nullopt;
      return n.kind == QueryNode::Kind::kAnd ? (*a && *b) : (*a || *b);
    }
  }
  return std::nullopt;
}

}  // namespace

std::string QueryAST::to_string() const { return node_text(*this, root_); }

bool operator==(const QueryAST& a, const QueryAST& b) {
  return a.schema_hash_ == b.schema_hash_ && same_tree(a, a.root_, b, b.root_);
}

QueryAST parse_query(std::string_view text, const TagSchema& schema) {
  return QueryParser(text, schema).parse();
}

bool evaluate(const QueryAST& ast, const TagView& record) {
  return eval_view(ast, ast.root_index(), record);
}

std::size_t count_variables(const QueryAST& ast) {
  std::set<std::size_t> vars;
  std::function<void(std::int32_t)> walk = [&](std::int32_t i) {
    const QueryNode& n = ast.node(i);
    switch (n.kind) {
      case QueryNode::Kind::kCompare:
      case QueryNode::Kind::kFlagTest: vars.insert(n.var); break;
      case QueryNode::Kind::kNot: walk(n.lhs); break;
      case QueryNode::Kind::kAnd:
      case QueryNode::Kind::kOr:
        walk(n.lhs);
        walk(n.rhs);
        break;
      default: break;
    }
  };
  walk(ast.root_index());
  return vars.size();
}

std::optional<FlagExpr> to_flag_expr(const QueryAST& ast) {
  return flag_expr_of(ast, ast.root_index());
}

std::vector<std::string> split_query_lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.front()))) line.remove_prefix(1);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.remove_suffix(1);
    if (!line.empty()) out.emplace_back(line);
    start = end + 1;
  }
  return out;
}

std::vector<std::string> read_query_file(const std::filesystem::path& path) {
  return split_query_lines(detail::read_text_file(path));
}

// ---------------------------------------------------------------------------
// CompiledQuery

CompiledQuery::CompiledQuery(const QueryAST& ast, const TagSchema& schema) {
  if (ast.schema_hash() != schema.hash()) {
    throw Error(Errc::kSchemaMismatch, "query was parsed against a different schema");
  }
  ops_.reserve(ast.nodes().size());
  for (const QueryNode& n : ast.nodes()) {
    Op op;
    op.kind = n.kind;
    op.lhs = n.lhs;
    op.rhs = n.rhs;
    if (n.kind == QueryNode::Kind::kCompare || n.kind == QueryNode::Kind::kFlagTest) {
      const VariableInfo& v = schema.at(n.var);
      op.presence_byte = schema.presence_offset() + static_cast<std::uint32_t>(n.var >> 3);
      op.presence_mask = static_cast<std::uint8_t>(1u << (n.var & 7));
      if (n.kind == QueryNode::Kind::kCompare) {
        op.is_int = v.desc.kind == VarKind::kInt32;
        op.cmp = n.op;
        op.literal = n.literal;
        op.byte = v.offset + 4 * n.slot;
      } else {
        op.byte = v.offset + (n.bit >> 3);
        op.mask = static_cast<std::uint8_t>(1u << (n.bit & 7));
      }
    }
    ops_.push_back(op);
  }
  root_ = ast.root_index();
}

bool CompiledQuery::eval(std::int32_t i, const std::uint8_t* slab) const {
  const Op& op = ops_[static_cast<std::size_t>(i)];
  switch (op.kind) {
    case QueryNode::Kind::kTrue: return true;
    case QueryNode::Kind::kFalse: return false;
    case QueryNode::Kind::kCompare: {
      if (!(slab[op.presence_byte] & op.presence_mask)) return false;
      const double v = op.is_int
                           ? static_cast<double>(static_cast<std::int32_t>(le::get_u32(slab + op.byte)))
                           : static_cast<double>(le::get_f32(slab + op.byte));
      return compare(v, op.cmp, op.literal);
    }
    case QueryNode::Kind::kFlagTest:
      return (slab[op.presence_byte] & op.presence_mask) && (slab[op.byte] & op.mask);
    case QueryNode::Kind::kAnd: return eval(op.lhs, slab) && eval(op.rhs, slab);
    case QueryNode::Kind::kOr: return eval(op.lhs, slab) || eval(op.rhs, slab);
    case QueryNode::Kind::kNot: return !eval(op.lhs, slab);
  }
  return false;
}

}  // namespace evidx
