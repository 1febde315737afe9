#pragma once

#include <condition_variable>
#include <cstdint>
#include <mutex>

namespace shv {

/// Nanoseconds since the Unix epoch.
class Clock {
public:
  virtual ~Clock() = default;
  virtual std::uint64_t now_ns() const = 0;
  /// Returns when now_ns() >= t or wake() was called.
  virtual void sleep_until(std::uint64_t t) = 0;
  virtual void wake() = 0;
};

class SystemClock final : public Clock {
public:
  std::uint64_t now_ns() const override;
  void sleep_until(std::uint64_t t) override;
  void wake() override;

private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t wakeups_ = 0;
};

/// Time only moves when the test says so.
class SimulatedClock final : public Clock {
public:
  explicit SimulatedClock(std::uint64_t start_ns = 0) : now_(start_ns) {}

  std::uint64_t now_ns() const override;
  void sleep_until(std::uint64_t t) override;
  void wake() override;

  void set(std::uint64_t t);
  void advance(std::uint64_t dt) { set(now_ns() + dt); }

private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::uint64_t now_;
  std::uint64_t wakeups_ = 0;
};

} // namespace shv
