#include "shv/vsensor.hpp"

#include "shv/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>

namespace shv {

double interpolate(std::span<const TimedValue> series, std::uint64_t t) {
  auto it = std::lower_bound(series.begin(), series.end(), t,
                             [](const TimedValue& p, std::uint64_t x) { return p.ts < x; });
  if (it != series.end() && it->ts == t)
    return it->value;
  if (it == series.begin() || it == series.end())
    throw Error(Errc::out_of_range, "no samples bracket t=" + std::to_string(t));
  const auto& b = *it;
  const auto& a = *(it - 1);
  double span = static_cast<double>(b.ts - a.ts);
  double offset = static_cast<double>(t - a.ts);
  return a.value + offset * (b.value - a.value) / span;
}

double convert_operand(double value, const Unit& operand_unit, const Unit& target_unit) {
  if (operand_unit.dimension == target_unit.dimension)
    return convert(value, operand_unit, target_unit);
  if (operand_unit.dimension == Dimension::compound)
    return value;
  return convert(value, operand_unit, base_unit(operand_unit.dimension));
}

namespace {

bool known_topic(const Database& db, const Topic& t) {
  return db.metadata().contains(t) || db.dictionary().find(t).has_value();
}

// Depth-first search over virtual dependencies; `path` holds the current
// chain so a back edge can be reported as the cycle itself.
bool find_cycle(const Topic& node, const std::map<Topic, std::vector<Topic>>& deps,
                std::vector<Topic>& path, std::set<Topic>& done) {
  if (done.contains(node))
    return false;
  if (auto pos = std::find(path.begin(), path.end(), node); pos != path.end()) {
    path.erase(path.begin(), pos);
    path.push_back(node);
    return true;
  }
  auto it = deps.find(node);
  if (it == deps.end())
    return false;
  path.push_back(node);
  for (const auto& next : it->second)
    if (find_cycle(next, deps, path, done))
      return true;
  path.pop_back();
  done.insert(node);
  return false;
}

std::uint64_t slack_for(const Database& db, const Topic& operand) {
  if (auto v = db.metadata().vsensor(operand))
    return v->interval_ns;
  return db.sensor_metadata(operand).interval_ns;
}

struct OperandSeries {
  Unit unit;
  std::vector<TimedValue> points;
};

std::vector<TimedValue> evaluate_impl(Database& db, const VSensorDef& def, std::uint64_t t0,
                                      std::uint64_t t1, EvalStats& stats, int depth);

OperandSeries fetch_operand(Database& db, const Topic& topic, std::uint64_t t0, std::uint64_t t1,
                            EvalStats& stats, int depth) {
  ++stats.operand_fetches;
  OperandSeries out;
  if (auto v = db.metadata().vsensor(topic)) {
    out.unit = v->unit;
    out.points = evaluate_impl(db, *v, t0, t1, stats, depth + 1);
    return out;
  }
  auto meta = db.sensor_metadata(topic);
  out.unit = meta.unit;
  auto sid = db.dictionary().find(topic);
  if (!sid)
    return out;
  for (const auto& p : db.store().query(*sid, t0, t1))
    out.points.push_back({p.ts, static_cast<double>(p.value) * meta.scale});
  return out;
}

std::uint64_t first_grid_point(std::uint64_t t0, std::uint64_t t_zero, std::uint64_t interval) {
  std::uint64_t phase = t_zero % interval;
  std::uint64_t g = t0 - t0 % interval + phase;
  if (g < t0)
    g += interval;
  if (g == 0)
    g = interval;
  return g;
}

std::vector<TimedValue> evaluate_impl(Database& db, const VSensorDef& def, std::uint64_t t0,
                                      std::uint64_t t1, EvalStats& stats, int depth) {
  if (depth > 64)
    throw Error(Errc::cycle_detected, "virtual sensor nesting too deep at " + def.topic.str());
  if (t1 <= t0)
    return {};
  auto sid = db.dictionary().encode(def.topic);

  std::map<std::uint64_t, double> result;
  for (const auto& p : db.store().query(sid, t0, t1)) {
    if (p.ts % def.interval_ns != def.t_zero_ns % def.interval_ns)
      continue;
    result[p.ts] = static_cast<double>(p.value) * def.scale;
  }
  stats.cached += result.size();

  std::vector<std::uint64_t> missing;
  for (auto g = first_grid_point(t0, def.t_zero_ns, def.interval_ns); g < t1; g += def.interval_ns) {
    if (!result.contains(g))
      missing.push_back(g);
    if (g > UINT64_MAX - def.interval_ns)
      break;
  }
  auto flatten = [&] {
    std::vector<TimedValue> out;
    out.reserve(result.size());
    for (auto [ts, v] : result)
      out.push_back({ts, v});
    return out;
  };
  if (missing.empty())
    return flatten();

  std::map<Topic, OperandSeries> operands;
  for (const auto& topic : def.expr.operands()) {
    auto slack = slack_for(db, topic);
    auto lo = missing.front() > slack ? missing.front() - slack : 0;
    auto hi = missing.back() < UINT64_MAX - slack - 1 ? missing.back() + slack + 1 : UINT64_MAX;
    auto series = fetch_operand(db, topic, lo, hi, stats, depth);
    // Physical sensors may sample slower than their metadata claims; widen
    // until the missing range is bracketed or the data runs out.
    std::optional<RawPoint> newest;
    if (!db.metadata().vsensor(topic))
      if (auto sid = db.dictionary().find(topic))
        newest = db.store().latest(*sid);
    for (std::uint64_t widen = slack; newest && widen != 0; widen *= 2) {
      const auto& pts = series.points;
      bool low_ok = lo == 0 || (!pts.empty() && pts.front().ts <= missing.front());
      bool high_ok = newest->ts < hi || (!pts.empty() && pts.back().ts >= missing.back());
      if ((low_ok && high_ok) || widen > (std::uint64_t{1} << 62))
        break;
      if (!low_ok)
        lo = lo > widen ? lo - widen : 0;
      if (!high_ok)
        hi = std::min(newest->ts + 1, hi + widen);
      series = fetch_operand(db, topic, lo, hi, stats, depth);
    }
    operands.emplace(topic, std::move(series));
  }

  std::vector<SensorReading> written;
  for (auto g : missing) {
    double value = 0;
    try {
      value = def.expr.evaluate([&](const Topic& t) {
        const auto& op = operands.at(t);
        return convert_operand(interpolate(op.points, g), op.unit, def.unit);
      });
    } catch (const Error& e) {
      if (e.code() == Errc::out_of_range) {
        ++stats.skipped_out_of_range;
        continue;
      }
      if (e.code() == Errc::division_by_zero) {
        ++stats.skipped_division_by_zero;
        continue;
      }
      throw;
    }
    double raw = std::round(value / def.scale);
    // int64 range check; 2^63 itself is not representable.
    if (!std::isfinite(raw) || raw >= 9223372036854775808.0 || raw < -9223372036854775808.0) {
      ++stats.skipped_overflow;
      continue;
    }
    auto stored = static_cast<std::int64_t>(raw);
    written.push_back({sid, g, stored});
    result[g] = static_cast<double>(stored) * def.scale;
    ++stats.computed;
  }
  if (!written.empty())
    db.store().insert(written);
  return flatten();
}

} // namespace

void define_vsensor(Database& db, VSensorDef def) {
  if (def.interval_ns == 0 || def.scale == 0.0)
    throw Error(Errc::invalid_metadata, def.topic.str() + ": interval and scale must be nonzero");
  if (db.metadata().sensor(def.topic))
    throw Error(Errc::invalid_metadata, def.topic.str() + " is a physical sensor");

  std::map<Topic, std::vector<Topic>> deps;
  for (const auto& v : db.metadata().vsensors())
    deps[v.topic] = v.expr.operands();
  deps[def.topic] = def.expr.operands();

  for (const auto& op : def.expr.operands())
    if (op != def.topic && !known_topic(db, op))
      throw Error(Errc::unknown_operand, "unknown operand " + op.str());

  std::vector<Topic> path;
  std::set<Topic> done;
  if (find_cycle(def.topic, deps, path, done)) {
    std::string chain;
    for (std::size_t i = 0; i < path.size(); ++i)
      chain += (i ? " -> " : "") + path[i].str();
    throw Error(Errc::cycle_detected, "cycle detected: " + chain);
  }

  auto sid = db.dictionary().encode(def.topic);
  // Written-back points of a previous definition, and of every virtual
  // sensor built on top of it, are no longer valid.
  if (auto previous = db.metadata().vsensor(def.topic); previous && !(*previous == def)) {
    db.store().delete_before(sid, UINT64_MAX);
    std::set<Topic> stale{def.topic};
    for (bool grew = true; grew;) {
      grew = false;
      for (const auto& [topic, operands] : deps) {
        if (stale.contains(topic))
          continue;
        for (const auto& op : operands) {
          if (stale.contains(op)) {
            stale.insert(topic);
            grew = true;
            if (auto dep_sid = db.dictionary().find(topic))
              db.store().delete_before(*dep_sid, UINT64_MAX);
            break;
          }
        }
      }
    }
  }
  db.metadata().put_vsensor(std::move(def));
  db.metadata().save();
  db.save_dictionary();
}

std::vector<TimedValue> evaluate(Database& db, const Topic& vsensor, std::uint64_t t0,
                                 std::uint64_t t1, EvalStats* stats) {
  auto def = db.metadata().vsensor(vsensor);
  if (!def)
    throw Error(Errc::unknown_sensor, vsensor.str() + " is not a virtual sensor");
  EvalStats local;
  return evaluate_impl(db, *def, t0, t1, stats ? *stats : local, 0);
}

} // namespace shv
