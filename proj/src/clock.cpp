#include "shv/clock.hpp"

#include <chrono>

namespace shv {

std::uint64_t SystemClock::now_ns() const {
  auto d = std::chrono::system_clock::now().time_since_epoch();
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(d).count());
}

void SystemClock::sleep_until(std::uint64_t t) {
  std::unique_lock lock(mutex_);
  auto seen = wakeups_;
  auto deadline = std::chrono::system_clock::time_point(
    std::chrono::duration_cast<std::chrono::system_clock::duration>(std::chrono::nanoseconds(t)));
  cv_.wait_until(lock, deadline, [&] { return wakeups_ != seen || now_ns() >= t; });
}

void SystemClock::wake() {
  {
    std::scoped_lock lock(mutex_);
    ++wakeups_;
  }
  cv_.notify_all();
}

std::uint64_t SimulatedClock::now_ns() const {
  std::scoped_lock lock(mutex_);
  return now_;
}

void SimulatedClock::sleep_until(std::uint64_t t) {
  std::unique_lock lock(mutex_);
  auto seen = wakeups_;
  cv_.wait(lock, [&] { return now_ >= t || wakeups_ != seen; });
}

void SimulatedClock::wake() {
  {
    std::scoped_lock lock(mutex_);
    ++wakeups_;
  }
  cv_.notify_all();
}

void SimulatedClock::set(std::uint64_t t) {
  {
    std::scoped_lock lock(mutex_);
    if (t > now_)
      now_ = t;
  }
  cv_.notify_all();
}

} // namespace shv
