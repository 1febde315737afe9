#pragma once

// Client-side query library: topic-based fetches over the store with
// scaling and virtual sensor delegation, integrals, derivatives and CSV.

#include "shv/database.hpp"
#include "shv/error.hpp"
#include "shv/storage.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace shv::query {

enum class Mode { scaled, raw };

struct QueryResult {
  Topic topic;
  Unit unit;
  Mode mode = Mode::scaled;
  std::vector<TimedValue> points;  // strictly increasing ts
  std::vector<RawPoint> raw;       // same timestamps; filled in raw mode only
};

/// Readings in [t0, t1). Throws Error{unknown_sensor}.
QueryResult fetch(Database& db, const Topic& topic, std::uint64_t t0, std::uint64_t t1,
                  Mode mode = Mode::scaled);

struct Quantity {
  double value = 0.0;
  Unit unit;
};

/// Trapezoidal integral over seconds. Throws Error{insufficient_data}.
Quantity integral(const QueryResult& result);

/// Backward difference per second, anchored at the later timestamp.
/// Throws Error{insufficient_data}.
QueryResult derivative(const QueryResult& result);

Unit integral_unit(const Unit& u);
Unit derivative_unit(const Unit& u);

inline constexpr std::string_view csv_header = "sensor,timestamp,value";

/// Raw results print integer values; scaled results print shortest
/// round-trip decimals.
std::string csv_export(std::span<const QueryResult> results);

class BadRow : public Error {
public:
  BadRow(std::size_t line, const std::string& why)
    : Error(Errc::bad_row, "bad row " + std::to_string(line) + ": " + why), line_(line) {}
  /// 1-based line number; the header is line 1.
  std::size_t line() const { return line_; }

private:
  std::size_t line_;
};

/// All-or-nothing import of raw rows. Returns the number of rows stored.
/// Throws Error{bad_header} or BadRow.
std::size_t csv_import(std::string_view text, Database& db);

} // namespace shv::query
