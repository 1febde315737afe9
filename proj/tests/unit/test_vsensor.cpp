#include "shv/expr.hpp"
#include "shv/querylib.hpp"
#include "shv/vsensor.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace shv;
using shv::testing::code_of;
using shv::testing::TempDir;

namespace {

constexpr std::uint64_t sec = 1'000'000'000;

void ingest(Database& db, const std::string& topic, std::uint64_t t0, std::uint64_t step,
            std::size_t n, const std::function<std::int64_t(std::size_t)>& value) {
  auto sid = db.dictionary().encode(Topic::parse(topic));
  for (std::size_t i = 0; i < n; ++i)
    db.store().insert(sid, t0 + i * step, value(i));
}

VSensorDef vdef(const std::string& topic, const std::string& expr, std::uint64_t interval = sec,
                double scale = 1e-9) {
  VSensorDef d;
  d.topic = Topic::parse(topic);
  d.expr = parse_expr(expr);
  d.interval_ns = interval;
  d.scale = scale;
  return d;
}

} // namespace

TEST(Expr, ParsesAndPrints) {
  auto e = parse_expr("(<\\/a\\/p1> + </a/p2>) / 1000");
  EXPECT_EQ(e.kind(), Expr::Kind::div);
  EXPECT_EQ(e.lhs().kind(), Expr::Kind::add);
  EXPECT_EQ(e.lhs().lhs().topic(), Topic::parse("/a/p1"));
  EXPECT_EQ(e.rhs().value(), 1000.0);
  EXPECT_EQ(parse_expr(e.str()), e);
  EXPECT_EQ(e.operands(), (std::vector<Topic>{Topic::parse("/a/p1"), Topic::parse("/a/p2")}));
}

TEST(Expr, Precedence) {
  auto none = [](const Topic&) -> double { throw std::logic_error("no operands"); };
  EXPECT_EQ(parse_expr("2*3+1").evaluate(none), 7.0);
  EXPECT_EQ(parse_expr("2*(3+1)").evaluate(none), 8.0);
  EXPECT_EQ(parse_expr("8/2/2").evaluate(none), 2.0);
  EXPECT_EQ(parse_expr("1-2-3").evaluate(none), -4.0);
  EXPECT_EQ(parse_expr("--3").evaluate(none), 3.0);
  EXPECT_EQ(parse_expr("-2*-3").evaluate(none), 6.0);
  EXPECT_EQ(parse_expr("1.5e2").evaluate(none), 150.0);
  EXPECT_EQ(code_of([&] { parse_expr("1/0").evaluate(none); }), Errc::division_by_zero);
}

TEST(Expr, SyntaxErrors) {
  for (const char* bad : {"<\\/a> + ", "", "(1", "1)", "<>", "<a>", "1 2", "*3", "</a"})
    EXPECT_EQ(code_of([&] { parse_expr(bad); }), Errc::syntax_error) << bad;
  try {
    parse_expr("<\\/a> + ");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("offset 8"), std::string::npos) << e.what();
  }
}

TEST(Interpolate, Examples) {
  std::vector<TimedValue> pts{{0, 0.0}, {10, 10.0}};
  EXPECT_DOUBLE_EQ(interpolate(pts, 5), 5.0);
  EXPECT_DOUBLE_EQ(interpolate(pts, 10), 10.0);
  EXPECT_EQ(code_of([&] { interpolate(pts, 11); }), Errc::out_of_range);
  EXPECT_EQ(code_of([&] { interpolate({}, 0); }), Errc::out_of_range);
}

TEST(VSensor, ConstantFold) {
  TempDir dir;
  Database db({dir.path()});
  ingest(db, "/A", sec, sec, 20, [](std::size_t) { return 2; });
  ingest(db, "/B", sec, sec, 20, [](std::size_t) { return 3; });
  define_vsensor(db, vdef("/V", "</A>+</B>", sec, 1.0));
  auto pts = evaluate(db, Topic::parse("/V"), sec, 11 * sec);
  ASSERT_EQ(pts.size(), 10u);
  for (const auto& p : pts)
    EXPECT_EQ(p.value, 5.0);
}

TEST(VSensor, CycleDetection) {
  TempDir dir;
  Database db({dir.path()});
  ingest(db, "/phys", sec, sec, 3, [](std::size_t) { return 1; });
  EXPECT_EQ(code_of([&] { define_vsensor(db, vdef("/V", "</V>")); }), Errc::cycle_detected);
  EXPECT_NO_THROW(define_vsensor(db, vdef("/V1", "</phys>")));
  EXPECT_NO_THROW(define_vsensor(db, vdef("/V2", "</V1>")));
  try {
    define_vsensor(db, vdef("/V1", "</V2>"));
    FAIL() << "expected a cycle";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::cycle_detected);
    EXPECT_NE(std::string(e.what()).find("/V1 -> /V2 -> /V1"), std::string::npos) << e.what();
  }
  EXPECT_EQ(code_of([&] { define_vsensor(db, vdef("/V3", "</nowhere>")); }), Errc::unknown_operand);
}

TEST(VSensor, CachesAndRedefinitionInvalidates) {
  TempDir dir;
  Database db({dir.path()});
  ingest(db, "/A", sec, sec, 30, [](std::size_t i) { return static_cast<std::int64_t>(i); });
  define_vsensor(db, vdef("/V", "</A>*2", sec, 1.0));
  define_vsensor(db, vdef("/W", "</V>+1", sec, 1.0));
  EvalStats first;
  auto w = evaluate(db, Topic::parse("/W"), 2 * sec, 12 * sec, &first);
  ASSERT_EQ(w.size(), 10u);
  EXPECT_EQ(w[0].value, 2.0 * 1 + 1);
  // 10 for W; V is evaluated one interval past each end for interpolation.
  EXPECT_EQ(first.computed, 22u);
  EvalStats second;
  evaluate(db, Topic::parse("/W"), 2 * sec, 12 * sec, &second);
  EXPECT_EQ(second.computed, 0u);
  EXPECT_EQ(second.operand_fetches, 0u);
  EXPECT_EQ(second.cached, 10u);

  define_vsensor(db, vdef("/V", "</A>*3", sec, 1.0));
  auto w2 = evaluate(db, Topic::parse("/W"), 2 * sec, 12 * sec);
  EXPECT_EQ(w2[0].value, 3.0 * 1 + 1);
}

TEST(VSensor, SkipsOutOfRangeAndDivisionByZero) {
  TempDir dir;
  Database db({dir.path()});
  ingest(db, "/A", 3 * sec, sec, 5, [](std::size_t i) { return static_cast<std::int64_t>(i) - 2; });
  define_vsensor(db, vdef("/V", "1/</A>", sec, 1e-6));
  EvalStats stats;
  auto pts = evaluate(db, Topic::parse("/V"), sec, 10 * sec, &stats);
  EXPECT_EQ(stats.skipped_out_of_range, 4u);  // 1, 2, 8, 9 s
  EXPECT_EQ(stats.skipped_division_by_zero, 1u);
  EXPECT_EQ(pts.size(), 4u);
}

TEST(VSensor, OverflowIsSkipped) {
  TempDir dir;
  Database db({dir.path()});
  ingest(db, "/A", sec, sec, 3, [](std::size_t) { return INT64_MAX; });
  define_vsensor(db, vdef("/V", "</A>*4", sec, 1.0));
  EvalStats stats;
  EXPECT_TRUE(evaluate(db, Topic::parse("/V"), sec, 4 * sec, &stats).empty());
  EXPECT_EQ(stats.skipped_overflow, 3u);
}

TEST(VSensor, UnitConversionOfOperands) {
  TempDir dir;
  Database db({dir.path()});
  ingest(db, "/kw", sec, sec, 5, [](std::size_t) { return 2; });
  SensorMetadata m;
  m.topic = Topic::parse("/kw");
  m.unit = unit_by_symbol("kW");
  db.metadata().set_sensor(m);
  auto d = vdef("/w", "</kw>", sec, 1.0);
  d.unit = unit_by_symbol("W");
  define_vsensor(db, d);
  auto pts = evaluate(db, Topic::parse("/w"), sec, 3 * sec);
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0].value, 2000.0);
}

TEST(VSensor, HeatRatioFixture) {
  TempDir dir;
  Database db({dir.path()});
  std::mt19937_64 rng(5);
  std::vector<std::int64_t> power(600);
  for (auto& p : power)
    p = 10'000 + static_cast<std::int64_t>(rng() % 5000) * 10;
  ingest(db, "/power", sec, sec, power.size(), [&](std::size_t i) { return power[i]; });
  ingest(db, "/heat", sec, sec, power.size(), [&](std::size_t i) { return power[i] * 9 / 10; });
  define_vsensor(db, vdef("/ratio", "</heat>/</power>", sec, 1e-9));
  auto pts = evaluate(db, Topic::parse("/ratio"), sec, 600 * sec);
  ASSERT_EQ(pts.size(), 599u);
  for (const auto& p : pts)
    EXPECT_NEAR(p.value, 0.9, 1e-9);
}

namespace {

// Test-side expression tree evaluated straight from raw series.
struct OracleNode {
  char op = 0;  // 0 leaf operand, 'c' constant, otherwise + - * /
  int operand = 0;
  double constant = 0;
  std::unique_ptr<OracleNode> l, r;
};

std::unique_ptr<OracleNode> random_tree(std::mt19937_64& rng, int depth, int n_operands) {
  auto n = std::make_unique<OracleNode>();
  if (depth == 0 || rng() % 3 == 0) {
    if (rng() % 4 == 0) {
      n->op = 'c';
      n->constant = 1 + static_cast<double>(rng() % 9);
    } else {
      n->operand = static_cast<int>(rng() % n_operands);
    }
    return n;
  }
  n->op = "+-*/"[rng() % 4];
  n->l = random_tree(rng, depth - 1, n_operands);
  n->r = random_tree(rng, depth - 1, n_operands);
  return n;
}

std::string render(const OracleNode& n) {
  if (n.op == 0)
    return "</op" + std::to_string(n.operand) + ">";
  if (n.op == 'c')
    return std::to_string(static_cast<int>(n.constant));
  return "(" + render(*n.l) + " " + n.op + " " + render(*n.r) + ")";
}

double oracle_eval(const OracleNode& n, const std::vector<double>& ops) {
  switch (n.op) {
  case 0: return ops[n.operand];
  case 'c': return n.constant;
  case '+': return oracle_eval(*n.l, ops) + oracle_eval(*n.r, ops);
  case '-': return oracle_eval(*n.l, ops) - oracle_eval(*n.r, ops);
  case '*': return oracle_eval(*n.l, ops) * oracle_eval(*n.r, ops);
  default: return oracle_eval(*n.l, ops) / oracle_eval(*n.r, ops);
  }
}

// L(s) = L(a) + (s - a)(L(b) - L(a)) / (b - a) over the bracketing samples.
double oracle_interp(const std::vector<std::pair<std::uint64_t, double>>& s, std::uint64_t t) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].first == t)
      return s[i].second;
    if (s[i].first > t) {
      auto [a, la] = s[i - 1];
      auto [b, lb] = s[i];
      return la + (static_cast<double>(t - a)) * (lb - la) / static_cast<double>(b - a);
    }
  }
  return NAN;
}

} // namespace

TEST(VSensor, RandomExpressionsMatchBruteForce) {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 40; ++trial) {
    TempDir dir;
    Database db({dir.path()});
    int n_ops = 1 + static_cast<int>(rng() % 4);
    std::vector<std::vector<std::pair<std::uint64_t, double>>> series(n_ops);
    for (int k = 0; k < n_ops; ++k) {
      std::uint64_t step = (200 + rng() % 1800) * 1'000'000;  // 0.2 s .. 2 s
      std::uint64_t t = rng() % step;
      auto sid = db.dictionary().encode(Topic::parse("/op" + std::to_string(k)));
      while (t < 120 * sec) {
        auto v = static_cast<std::int64_t>(1 + rng() % 100000);
        db.store().insert(sid, t + 1, v);
        series[k].push_back({t + 1, static_cast<double>(v)});
        t += step;
      }
    }
    auto tree = random_tree(rng, 3, n_ops);
    std::uint64_t interval = (100 + rng() % 2000) * 1'000'000;
    auto def = vdef("/v", render(*tree), interval, 1e-12);
    def.t_zero_ns = rng() % interval;
    define_vsensor(db, def);

    std::uint64_t t0 = 10 * sec + rng() % (20 * sec);
    std::uint64_t t1 = t0 + 60 * sec;
    auto got = evaluate(db, Topic::parse("/v"), t0, t1);
    std::size_t expected_points = 0;
    std::size_t i = 0;
    std::uint64_t g = t0 + (def.t_zero_ns + interval - t0 % interval) % interval;
    for (; g < t1; g += interval) {
      std::vector<double> ops;
      for (const auto& s : series)
        ops.push_back(oracle_interp(s, g));
      double want = oracle_eval(*tree, ops);
      if (!std::isfinite(want) || std::abs(want / 1e-12) >= 9.2e18)
        continue;
      ++expected_points;
      ASSERT_LT(i, got.size());
      EXPECT_EQ(got[i].ts, g);
      EXPECT_NEAR(got[i].value, want, 1e-9 * std::max(std::abs(want), 1.0))
        << render(*tree) << " at " << g;
      ++i;
    }
    EXPECT_EQ(got.size(), expected_points);
  }
}
