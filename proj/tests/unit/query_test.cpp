#include <gtest/gtest.h>

#include <map>
#include <memory>
#include <optional>
#include <random>

#include "evidx/query.hpp"
#include "test_support.hpp"

namespace evidx {
namespace {

const TagSchema& schema() { return TagSchema::builtin(); }

QueryAST parse(const std::string& q) { return parse_query(q, schema()); }

Errc code_of(const std::string& q) {
  try {
    parse(q);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected failure for: " << q;
  return Errc::kInvalidArgument;
}

TEST(QueryParse, Comparison) {
  const QueryAST a = parse("ET_TOTAL > 30.0");
  EXPECT_EQ(a.root().kind, QueryNode::Kind::kCompare);
  EXPECT_EQ(a.root().name, "ET_TOTAL");
  EXPECT_EQ(a.root().op, CompareOp::kGt);
  EXPECT_EQ(a.root().literal, 30.0);
  EXPECT_EQ(a.to_string(), "ET_TOTAL > 30");
}

TEST(QueryParse, ConstantsAndKeywordsAreCaseInsensitive) {
  EXPECT_EQ(parse("true").root().kind, QueryNode::Kind::kTrue);
  EXPECT_EQ(parse("FALSE").root().kind, QueryNode::Kind::kFalse);
  EXPECT_EQ(parse("et_total >= 1 AND Not flag(3)"), parse("ET_TOTAL >= 1 and not flag(OFFLINE, 3)"));
}

TEST(QueryParse, FlagRanges) {
  EXPECT_NO_THROW(parse("flag(OFFLINE, 127)"));
  EXPECT_EQ(code_of("flag(OFFLINE, 128)"), Errc::kOutOfRange);
  EXPECT_EQ(code_of("flag(TLT, 352)"), Errc::kOutOfRange);
  EXPECT_NO_THROW(parse("flag(TLT, 351)"));
  EXPECT_EQ(code_of("flag(NOPE, 1)"), Errc::kUnknownName);
  EXPECT_EQ(code_of("flag(ET_TOTAL, 1)"), Errc::kUnknownName);
  EXPECT_EQ(code_of("FLT > 3"), Errc::kUnknownName);
  EXPECT_EQ(code_of("XYZZY > 3"), Errc::kUnknownName);
  EXPECT_EQ(code_of("ET_TOTAL[1] > 3"), Errc::kOutOfRange);
}

TEST(QueryParse, SyntaxErrorsHaveColumns) {
  for (const char* bad : {"ET_TOTAL >", "(true", "true and", "ET_TOTAL >> 3", "flag(3", "ET_TOTAL > abc",
                          "true false", ""}) {
    try {
      parse(bad);
      ADD_FAILURE() << "accepted: " << bad;
    } catch (const ParseError& e) {
      EXPECT_GE(e.column(), 1u) << bad;
      EXPECT_EQ(e.code(), Errc::kParse);
    }
  }
}

TEST(QueryParse, Precedence) {
  // and binds tighter than or; not tighter than and.
  EXPECT_EQ(parse("true or false and false").to_string(), "(true or (false and false))");
  EXPECT_EQ(parse("not true and false").to_string(), "(not true and false)");
}

TEST(QueryCount, DistinctVariables) {
  EXPECT_EQ(count_variables(parse("true")), 0u);
  EXPECT_EQ(count_variables(parse("ET_TOTAL > 30 and ET_TOTAL < 100")), 1u);
  EXPECT_EQ(count_variables(parse("flag(3) or flag(5) or flag(FLT, 2)")), 2u);
  EXPECT_EQ(count_variables(parse("ET_TOTAL > 1 and E_TOTAL > 1 and MISS_ET > 1 and VTX_Z > 1 and "
                                  "N_PRIM_TRK > 1 and LPS_XL > 1")),
            6u);
}

TEST(QueryFlagExpr, OnlyFlagQueriesTranslate) {
  auto e = to_flag_expr(parse("flag(3) and not flag(0)"));
  ASSERT_TRUE(e.has_value());
  EXPECT_TRUE(e->evaluate(FlagWords{{0x468, 0, 0, 0}}));
  EXPECT_FALSE(e->evaluate(FlagWords{{0x469, 0, 0, 0}}));
  EXPECT_FALSE(to_flag_expr(parse("flag(3) and ET_TOTAL > 3")).has_value());
  EXPECT_FALSE(to_flag_expr(parse("flag(FLT, 3)")).has_value());
  EXPECT_TRUE(to_flag_expr(parse("true")).has_value());
}

TEST(QueryFile, CommentsAndBlankLines) {
  const auto lines = split_query_lines("# header\n\nET_TOTAL > 30  # cut\n  flag(3)\n");
  EXPECT_EQ(lines, (std::vector<std::string>{"ET_TOTAL > 30", "flag(3)"}));
}

TEST(QueryEval, MissingValueSemantics) {
  TagRecord t(schema());
  const QueryAST q = parse("EA1_E > 5");
  EXPECT_FALSE(evaluate(q, t.view()));
  EXPECT_TRUE(evaluate(parse("not EA1_E > 5"), t.view()));
  t.set_value("ET_TOTAL", 45);
  EXPECT_TRUE(evaluate(parse("ET_TOTAL > 30"), t.view()));
  EXPECT_FALSE(evaluate(parse("ET_TOTAL != 45"), t.view()));
}

// --- Dual-implementation oracle -------------------------------------------

// The oracle's own expression tree, rendered to text and evaluated without
// the library's AST.
struct Expr {
  enum K { kCmp, kFlag, kAnd, kOr, kNot, kConst } k = kConst;
  std::string name;
  std::uint32_t slot_or_bit = 0;
  std::string op;
  double lit = 0;
  bool value = true;
  std::shared_ptr<Expr> a, b;
};
using ExprP = std::shared_ptr<Expr>;

struct Oracle {
  static bool compare(double v, const std::string& op, double lit) {
    if (op == "<") return v < lit;
    if (op == "<=") return v <= lit;
    if (op == ">") return v > lit;
    if (op == ">=") return v >= lit;
    if (op == "==") return v == lit;
    return v != lit;
  }

  static bool eval(const Expr& e, const std::map<std::string, std::optional<double>>& values,
                   const std::map<std::string, std::vector<bool>>& bits) {
    switch (e.k) {
      case Expr::kConst: return e.value;
      case Expr::kCmp: {
        const auto& v = values.at(e.name);
        return v.has_value() && compare(*v, e.op, e.lit);
      }
      case Expr::kFlag: return bits.at(e.name)[e.slot_or_bit];
      case Expr::kAnd: return eval(*e.a, values, bits) && eval(*e.b, values, bits);
      case Expr::kOr: return eval(*e.a, values, bits) || eval(*e.b, values, bits);
      case Expr::kNot: return !eval(*e.a, values, bits);
    }
    return false;
  }

  static std::string text(const Expr& e) {
    char buf[64];
    switch (e.k) {
      case Expr::kConst: return e.value ? "TRUE" : "false";
      case Expr::kCmp:
        std::snprintf(buf, sizeof buf, " %s %.17g", e.op.c_str(), e.lit);
        return e.name + buf;
      case Expr::kFlag: return "flag(" + e.name + ", " + std::to_string(e.slot_or_bit) + ")";
      case Expr::kAnd: return "(" + text(*e.a) + ") AND (" + text(*e.b) + ")";
      case Expr::kOr: return "(" + text(*e.a) + ") or (" + text(*e.b) + ")";
      case Expr::kNot: return "not (" + text(*e.a) + ")";
    }
    return {};
  }
};

const std::vector<std::string> kScalars = {"ET_TOTAL", "E_TOTAL", "EA1_E", "VTX_Z", "RUN", "N_PRIM_TRK"};
const std::vector<std::pair<std::string, std::uint32_t>> kGroups = {{"OFFLINE", 128}, {"FLT", 64}};
const char* kOps[] = {"<", "<=", ">", ">=", "==", "!="};

ExprP random_expr(std::mt19937_64& rng, int depth) {
  auto e = std::make_shared<Expr>();
  const int pick = depth <= 0 ? static_cast<int>(rng() % 3) : static_cast<int>(rng() % 6);
  switch (pick) {
    case 0:
    case 1:
      e->k = Expr::kCmp;
      e->name = kScalars[rng() % kScalars.size()];
      e->op = kOps[rng() % 6];
      // Literals on the same small grid as the values so equality happens.
      e->lit = static_cast<double>(static_cast<int>(rng() % 21) - 5) * 0.5;
      if (rng() % 7 == 0) e->lit = 0.1;
      break;
    case 2: {
      e->k = Expr::kFlag;
      const auto& g = kGroups[rng() % kGroups.size()];
      e->name = g.first;
      e->slot_or_bit = static_cast<std::uint32_t>(rng() % 8);
      break;
    }
    case 3:
      e->k = Expr::kNot;
      e->a = random_expr(rng, depth - 1);
      break;
    case 4:
    case 5:
      e->k = pick == 4 ? Expr::kAnd : Expr::kOr;
      e->a = random_expr(rng, depth - 1);
      e->b = random_expr(rng, depth - 1);
      break;
  }
  if (rng() % 50 == 0) {
    e = std::make_shared<Expr>();
    e->k = Expr::kConst;
    e->value = rng() & 1;
  }
  return e;
}

struct RandomRecord {
  TagRecord tag;
  std::map<std::string, std::optional<double>> values;
  std::map<std::string, std::vector<bool>> bits;
};

RandomRecord random_record(std::mt19937_64& rng) {
  RandomRecord r{TagRecord(schema()), {}, {}};
  for (const auto& n : kScalars) {
    if (rng() % 5 == 0) {
      r.values[n] = std::nullopt;
      r.tag.set_missing(*schema().find(n));
      continue;
    }
    const bool is_int = schema().get(n).desc.kind == VarKind::kInt32;
    // Integers, halves and one value that is not representable in float32.
    double v = static_cast<double>(static_cast<int>(rng() % 21) - 5) * (is_int ? 1.0 : 0.5);
    if (!is_int && rng() % 7 == 0) v = 0.1;
    r.tag.set_value(n, v);
    r.values[n] = is_int ? v : static_cast<double>(static_cast<float>(v));
  }
  for (const auto& [g, width] : kGroups) {
    std::vector<bool> b(width);
    const std::size_t var = *schema().find(g);
    for (std::uint32_t i = 0; i < width; ++i) {
      b[i] = rng() & 1;
      r.tag.set_bit(var, i, b[i]);
    }
    r.bits[g] = b;
  }
  return r;
}

TEST(QueryOracle, LibraryMatchesIndependentEvaluator) {
  std::mt19937_64 rng(20240601);
  std::vector<RandomRecord> records;
  for (int i = 0; i < 10000; ++i) records.push_back(random_record(rng));
  for (int q = 0; q < 60; ++q) {
    const ExprP e = random_expr(rng, 4);
    const std::string text = Oracle::text(*e);
    const QueryAST ast = parse(text);
    const CompiledQuery compiled(ast, schema());
    for (const auto& r : records) {
      const bool want = Oracle::eval(*e, r.values, r.bits);
      ASSERT_EQ(evaluate(ast, r.tag.view()), want) << text;
      ASSERT_EQ(compiled.matches(r.tag.slab().data()), want) << text;
    }
  }
}

TEST(QueryProperties, CanonicalTextRoundTrips) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const QueryAST a = parse(Oracle::text(*random_expr(rng, 5)));
    const QueryAST b = parse(a.to_string());
    ASSERT_EQ(a, b) << a.to_string();
    ASSERT_EQ(b.to_string(), a.to_string());
  }
}

TEST(QueryProperties, DeMorganHolds) {
  std::mt19937_64 rng(9);
  std::vector<RandomRecord> records;
  for (int i = 0; i < 500; ++i) records.push_back(random_record(rng));
  for (int i = 0; i < 100; ++i) {
    const std::string x = Oracle::text(*random_expr(rng, 3));
    const std::string y = Oracle::text(*random_expr(rng, 3));
    const QueryAST lhs = parse("not ((" + x + ") and (" + y + "))");
    const QueryAST rhs = parse("(not (" + x + ")) or (not (" + y + "))");
    const QueryAST lhs2 = parse("not ((" + x + ") or (" + y + "))");
    const QueryAST rhs2 = parse("(not (" + x + ")) and (not (" + y + "))");
    for (const auto& r : records) {
      ASSERT_EQ(evaluate(lhs, r.tag.view()), evaluate(rhs, r.tag.view()));
      ASSERT_EQ(evaluate(lhs2, r.tag.view()), evaluate(rhs2, r.tag.view()));
    }
  }
}

}  // namespace
}  // namespace evidx
