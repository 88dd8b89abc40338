#include "circus/clock.hpp"

#include <thread>

namespace circus {

Clock::time_point SystemClock::now() const { return std::chrono::steady_clock::now(); }

void SystemClock::sleep_for(Duration d) { std::this_thread::sleep_for(d); }

void SystemClock::advance_to(time_point) {}

Clock::time_point SimClock::now() const {
  return time_point(std::chrono::steady_clock::duration(now_.load()));
}

void SimClock::sleep_for(Duration d) {
  now_.fetch_add(std::chrono::duration_cast<std::chrono::steady_clock::duration>(d).count());
}

void SimClock::advance_to(time_point t) {
  auto target = t.time_since_epoch().count();
  auto cur = now_.load();
  while (cur < target && !now_.compare_exchange_weak(cur, target)) {
  }
}

}  // namespace circus
