#include "shv/querylib.hpp"
#include "shv/vsensor.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

using namespace shv;
using namespace shv::query;
using shv::testing::code_of;
using shv::testing::TempDir;

namespace {

constexpr std::uint64_t sec = 1'000'000'000;

QueryResult series(const std::string& unit, std::vector<TimedValue> pts) {
  QueryResult r;
  r.topic = Topic::parse("/s");
  r.unit = unit_by_symbol(unit);
  r.points = std::move(pts);
  return r;
}

} // namespace

TEST(Query, FetchScalesPhysicalSensor) {
  TempDir dir;
  Database db({dir.path()});
  auto topic = Topic::parse("/n/temp");
  auto sid = db.dictionary().encode(topic);
  SensorMetadata m;
  m.topic = topic;
  m.unit = unit_by_symbol("C");
  m.scale = 0.001;
  db.metadata().set_sensor(m);
  for (std::uint64_t i = 1; i <= 3; ++i)
    db.store().insert(sid, i * sec, static_cast<std::int64_t>(i) * 45000);
  auto r = fetch(db, topic, 0, 10 * sec);
  ASSERT_EQ(r.points.size(), 3u);
  EXPECT_DOUBLE_EQ(r.points[0].value, 45.0);
  EXPECT_EQ(r.unit.symbol, "\xC2\xB0" "C");
  auto raw = fetch(db, topic, 0, 10 * sec, Mode::raw);
  EXPECT_EQ(raw.raw[2], (RawPoint{3 * sec, 135000}));
  EXPECT_EQ(code_of([&] { fetch(db, Topic::parse("/nope"), 0, 1); }), Errc::unknown_sensor);
}

TEST(Query, FetchDelegatesVirtualSensors) {
  TempDir dir;
  Database db({dir.path()});
  auto sid = db.dictionary().encode(Topic::parse("/a"));
  for (std::uint64_t i = 1; i <= 10; ++i)
    db.store().insert(sid, i * sec, static_cast<std::int64_t>(i));
  VSensorDef d;
  d.topic = Topic::parse("/v");
  d.expr = parse_expr("</a> * 2");
  define_vsensor(db, d);
  auto r = fetch(db, d.topic, sec, 6 * sec);
  auto direct = evaluate(db, d.topic, sec, 6 * sec);
  EXPECT_EQ(r.points, direct);
  EXPECT_EQ(r.points.size(), 5u);
}

TEST(Query, IntegralExamples) {
  std::vector<TimedValue> constant, ramp;
  for (std::uint64_t i = 0; i <= 10; ++i) {
    constant.push_back({i * sec, 2.0});
    ramp.push_back({i * sec, static_cast<double>(i)});
  }
  auto q = integral(series("W", constant));
  EXPECT_DOUBLE_EQ(q.value, 20.0);
  EXPECT_EQ(q.unit.symbol, "J");
  EXPECT_DOUBLE_EQ(integral(series("W", ramp)).value, 50.0);
  EXPECT_EQ(integral(series("kW", ramp)).unit.symbol, "kJ");
  EXPECT_EQ(integral(series("", ramp)).unit.symbol, "s");
  EXPECT_EQ(code_of([] { integral(series("W", {{1, 1.0}})); }), Errc::insufficient_data);
}

TEST(Query, DerivativeExamples) {
  std::vector<TimedValue> ramp, flat;
  for (std::uint64_t i = 0; i < 6; ++i) {
    ramp.push_back({i * sec, static_cast<double>(i)});
    flat.push_back({i * sec, 4.0});
  }
  auto d = derivative(series("J", ramp));
  ASSERT_EQ(d.points.size(), 5u);
  EXPECT_EQ(d.points[0].ts, sec);
  for (const auto& p : d.points)
    EXPECT_DOUBLE_EQ(p.value, 1.0);
  EXPECT_EQ(d.unit.symbol, "W");
  for (const auto& p : derivative(series("W", flat)).points)
    EXPECT_EQ(p.value, 0.0);
  EXPECT_EQ(derivative(series("B", ramp)).unit.symbol, "B/s");
}

TEST(Query, CsvExportAndImport) {
  TempDir dir;
  Database db({dir.path()});
  auto topic = Topic::parse("/r1/c1/n1/power");
  db.store().insert(db.dictionary().encode(topic), 1'000'000'000, 42);
  std::vector<QueryResult> results{fetch(db, topic, 0, UINT64_MAX, Mode::raw)};
  auto text = csv_export(results);
  EXPECT_EQ(text, "sensor,timestamp,value\n/r1/c1/n1/power,1000000000,42\n");

  TempDir other;
  Database db2({other.path()});
  EXPECT_EQ(csv_import(text, db2), 1u);
  EXPECT_EQ(csv_export(std::vector{fetch(db2, topic, 0, UINT64_MAX, Mode::raw)}), text);
}

TEST(Query, CsvImportIsAllOrNothing) {
  TempDir dir;
  Database db({dir.path()});
  try {
    csv_import("sensor,timestamp,value\na,b,c\n", db);
    FAIL();
  } catch (const BadRow& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  try {
    csv_import("sensor,timestamp,value\n/x,1,1\n/x,2,2\n/x,3,oops\n", db);
    FAIL();
  } catch (const BadRow& e) {
    EXPECT_EQ(e.line(), 4u);
  }
  EXPECT_FALSE(db.dictionary().find(Topic::parse("/x")));
  EXPECT_EQ(code_of([&] { csv_import("ts,value\n", db); }), Errc::bad_header);
}
