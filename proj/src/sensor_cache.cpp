#include "shv/sensor_cache.hpp"

#include "shv/error.hpp"

#include <algorithm>

namespace shv {

void SensorCache::insert(std::uint64_t ts, std::int64_t value) {
  std::scoped_lock lock(mutex_);
  if (entries_.empty() || entries_.back().ts < ts) {
    entries_.push_back({ts, value});
  } else {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), ts,
                               [](const RawPoint& p, std::uint64_t t) { return p.ts < t; });
    if (it != entries_.end() && it->ts == ts)
      it->value = value;
    else
      entries_.insert(it, {ts, value});
  }
  auto newest = entries_.back().ts;
  auto floor = newest > window_ ? newest - window_ : 0;
  while (!entries_.empty() && entries_.front().ts < floor)
    entries_.pop_front();
}

std::vector<RawPoint> SensorCache::snapshot() const {
  std::scoped_lock lock(mutex_);
  return {entries_.begin(), entries_.end()};
}

std::optional<RawPoint> SensorCache::latest() const {
  std::scoped_lock lock(mutex_);
  if (entries_.empty())
    return std::nullopt;
  return entries_.back();
}

std::size_t SensorCache::size() const {
  std::scoped_lock lock(mutex_);
  return entries_.size();
}

double SensorCache::average(std::uint64_t window_ns) const {
  std::scoped_lock lock(mutex_);
  if (entries_.empty())
    throw Error(Errc::empty_window, "no cached readings");
  window_ns = std::min(window_ns, window_);
  auto newest = entries_.back().ts;
  __int128 sum = 0;
  std::size_t n = 0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (newest - it->ts >= window_ns)
      break;
    sum += it->value;
    ++n;
  }
  if (n == 0)
    throw Error(Errc::empty_window, "no readings inside the window");
  return static_cast<double>(static_cast<long double>(sum) / static_cast<long double>(n));
}

void SensorCache::expire(std::uint64_t now_ns) {
  std::scoped_lock lock(mutex_);
  auto floor = now_ns > window_ ? now_ns - window_ : 0;
  while (!entries_.empty() && entries_.front().ts < floor)
    entries_.pop_front();
}

} // namespace shv
