#include "shv/querylib.hpp"

#include "shv/error.hpp"
#include "shv/metadata.hpp"
#include "shv/vsensor.hpp"

#include <charconv>
#include <cmath>

namespace shv::query {

QueryResult fetch(Database& db, const Topic& topic, std::uint64_t t0, std::uint64_t t1, Mode mode) {
  QueryResult out;
  out.topic = topic;
  out.mode = mode;
  if (auto v = db.metadata().vsensor(topic)) {
    out.unit = v->unit;
    out.points = evaluate(db, topic, t0, t1);
    if (mode == Mode::raw) {
      for (auto& p : out.points) {
        auto raw = std::llround(p.value / v->scale);
        out.raw.push_back({p.ts, raw});
        p.value = static_cast<double>(raw);
      }
    }
    return out;
  }
  auto sid = db.dictionary().find(topic);
  if (!sid && !db.metadata().sensor(topic))
    throw Error(Errc::unknown_sensor, "unknown sensor " + topic.str());
  auto meta = db.sensor_metadata(topic);
  out.unit = meta.unit;
  if (!sid)
    return out;
  auto points = db.store().query(*sid, t0, t1);
  out.points.reserve(points.size());
  for (const auto& p : points) {
    double v = static_cast<double>(p.value);
    out.points.push_back({p.ts, mode == Mode::raw ? v : v * meta.scale});
  }
  if (mode == Mode::raw)
    out.raw = std::move(points);
  return out;
}

Unit integral_unit(const Unit& u) {
  if (u.dimension == Dimension::power)
    if (const auto* e = find_unit(Dimension::energy, u.factor))
      return *e;
  if (u.dimension == Dimension::dimensionless)
    return unit_by_symbol("s");
  return Unit{u.symbol + "*s", Dimension::compound, u.factor};
}

Unit derivative_unit(const Unit& u) {
  if (u.dimension == Dimension::energy)
    if (const auto* p = find_unit(Dimension::power, u.factor))
      return *p;
  if (u.dimension == Dimension::dimensionless)
    return Unit{"1/s", Dimension::compound, 1.0};
  return Unit{u.symbol + "/s", Dimension::compound, u.factor};
}

Quantity integral(const QueryResult& result) {
  const auto& p = result.points;
  if (p.size() < 2)
    throw Error(Errc::insufficient_data, "integral needs at least two points");
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    double dt = static_cast<double>(p[i + 1].ts - p[i].ts) / 1e9;
    sum += (p[i].value + p[i + 1].value) / 2.0 * dt;
  }
  return {sum, integral_unit(result.unit)};
}

QueryResult derivative(const QueryResult& result) {
  const auto& p = result.points;
  if (p.size() < 2)
    throw Error(Errc::insufficient_data, "derivative needs at least two points");
  QueryResult out;
  out.topic = result.topic;
  out.unit = derivative_unit(result.unit);
  out.mode = Mode::scaled;
  out.points.reserve(p.size() - 1);
  for (std::size_t i = 1; i < p.size(); ++i) {
    double dt = static_cast<double>(p[i].ts - p[i - 1].ts) / 1e9;
    out.points.push_back({p[i].ts, (p[i].value - p[i - 1].value) / dt});
  }
  return out;
}

std::string csv_export(std::span<const QueryResult> results) {
  std::string out(csv_header);
  out += '\n';
  for (const auto& r : results) {
    auto topic = r.topic.str();
    for (std::size_t i = 0; i < r.points.size(); ++i) {
      out += topic;
      out += ',';
      out += std::to_string(r.points[i].ts);
      out += ',';
      if (r.mode == Mode::raw && i < r.raw.size())
        out += std::to_string(r.raw[i].value);
      else
        out += format_double(r.points[i].value);
      out += '\n';
    }
  }
  return out;
}

namespace {

template <typename T>
bool parse_int(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

} // namespace

std::size_t csv_import(std::string_view text, Database& db) {
  auto next_line = [&text]() {
    auto eol = text.find('\n');
    auto line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    if (!line.empty() && line.back() == '\r')
      line.remove_suffix(1);
    return line;
  };
  if (text.empty() || next_line() != csv_header)
    throw Error(Errc::bad_header, "expected header '" + std::string(csv_header) + "'");

  struct Row {
    Topic topic;
    std::uint64_t ts;
    std::int64_t value;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (!text.empty()) {
    auto line = next_line();
    ++line_no;
    if (line.empty())
      continue;
    auto c1 = line.find(',');
    auto c2 = c1 == std::string_view::npos ? c1 : line.find(',', c1 + 1);
    if (c2 == std::string_view::npos || line.find(',', c2 + 1) != std::string_view::npos)
      throw BadRow(line_no, "expected three fields");
    Row row;
    try {
      row.topic = Topic::parse(line.substr(0, c1));
    } catch (const Error& e) {
      throw BadRow(line_no, e.what());
    }
    if (!parse_int(line.substr(c1 + 1, c2 - c1 - 1), row.ts) || row.ts == 0)
      throw BadRow(line_no, "timestamp must be a positive integer");
    if (!parse_int(line.substr(c2 + 1), row.value))
      throw BadRow(line_no, "value must be a 64-bit integer");
    rows.push_back(std::move(row));
  }

  std::vector<SensorReading> readings;
  readings.reserve(rows.size());
  for (const auto& r : rows)
    readings.push_back({db.dictionary().encode(r.topic), r.ts, r.value});
  db.store().insert(readings);
  db.flush();
  return readings.size();
}

} // namespace shv::query
