#pragma once

// Time-window ring of a sensor's most recent readings, shared by the pusher
// and the collect agent.

#include "shv/storage.hpp"

#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <vector>

namespace shv {

inline constexpr std::uint64_t default_cache_window_ns = 120'000'000'000ULL;

class SensorCache {
public:
  explicit SensorCache(std::uint64_t window_ns = default_cache_window_ns) : window_(window_ns) {}

  /// Keeps entries with ts >= newest - window. Out-of-order inserts are
  /// placed in order; an insert at an existing timestamp replaces it.
  void insert(std::uint64_t ts, std::int64_t value);

  std::vector<RawPoint> snapshot() const;
  std::optional<RawPoint> latest() const;
  std::size_t size() const;
  std::uint64_t window_ns() const { return window_; }

  /// Mean of values with ts > newest - window_ns, the window capped at the
  /// cache window. Throws Error{empty_window}.
  double average(std::uint64_t window_ns) const;

  /// Entries older than now - window are dropped; used when no new
  /// readings arrive.
  void expire(std::uint64_t now_ns);

private:
  mutable std::mutex mutex_;
  std::uint64_t window_;
  std::deque<RawPoint> entries_;
};

} // namespace shv
