#pragma once

#include <atomic>
#include <chrono>
#include <mutex>

namespace circus {

using Duration = std::chrono::nanoseconds;

/// Time source for slow-control loops. Orchestration runs against either the
/// wall clock or a simulated clock so that long schedules replay in
/// milliseconds.
class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;

  virtual ~Clock() = default;
  virtual time_point now() const = 0;
  virtual void sleep_for(Duration d) = 0;
  /// Moves simulated time forward to at least `t`; no-op for real clocks.
  virtual void advance_to(time_point t) = 0;
};

class SystemClock final : public Clock {
 public:
  time_point now() const override;
  void sleep_for(Duration d) override;
  void advance_to(time_point t) override;
};

/// Manually driven clock. `sleep_for` returns immediately after advancing.
class SimClock final : public Clock {
 public:
  SimClock() = default;
  explicit SimClock(time_point start) : now_(start.time_since_epoch().count()) {}

  time_point now() const override;
  void sleep_for(Duration d) override;
  void advance_to(time_point t) override;

 private:
  std::atomic<std::chrono::steady_clock::rep> now_{0};
};

}  // namespace circus
