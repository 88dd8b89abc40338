#pragma once

#include <cstdint>
#include <optional>

#include "circus/rtio/crate.hpp"

namespace circus::script {

struct LaserSyncConfig {
  /// Q-switch trigger lines of the two lasers.
  std::uint16_t laser_a = 8;
  std::uint16_t laser_b = 9;
  /// Flashlamp lines, used in on-demand mode.
  std::optional<std::uint16_t> pump_a = 10;
  std::optional<std::uint16_t> pump_b = 11;
  double rate_a_hz = 10.0;
  double rate_b_hz = 4.0;
  /// Both trains restart in phase at every multiple of this.
  rtio::MachineTime realign = rtio::MachineTime::s(30);
  rtio::MachineTime pulse_width = rtio::MachineTime::us(1);
  /// Flashlamp to Q-switch delay in on-demand mode.
  rtio::MachineTime pump_lead = rtio::MachineTime::us(200);

  /// Throws ConfigMismatch (lines missing or not outputs) or InvalidArgument.
  void validate(const rtio::CrateConfig& crate) const;
  rtio::MachineTime period_a() const;
  rtio::MachineTime period_b() const;
};

/// Free-running dual-laser trains, re-triggered together at every
/// realignment boundary to remove accumulated drift.
class ContinuousLaserSync {
 public:
  /// `start` is the first coincident shot; it must not be in the past.
  ContinuousLaserSync(rtio::Crate& crate, LaserSyncConfig config, rtio::MachineTime start);

  /// Schedules every shot at or before `until` and runs the crate there.
  void advance(rtio::MachineTime until);
  /// Executes outstanding edges; no further shots are scheduled.
  void stop();
  std::uint64_t shots_a() const { return a_.count; }
  std::uint64_t shots_b() const { return b_.count; }

 private:
  struct Train {
    std::uint16_t ttl;
    rtio::MachineTime period;
    std::uint64_t window = 0;
    std::uint64_t index = 0;
    std::uint64_t count = 0;
  };
  rtio::MachineTime next_time(Train& t) const;
  void schedule_until(Train& t, rtio::MachineTime until);

  rtio::Crate& crate_;
  LaserSyncConfig config_;
  rtio::MachineTime start_;
  Train a_, b_;
  bool stopped_ = false;
};

/// Runs continuous mode from `start` for `duration` (inclusive of a shot at
/// the end) and returns the trace of that span.
rtio::WaveformTrace laser_sync_continuous(rtio::Crate& crate, const LaserSyncConfig& config, rtio::MachineTime start,
                                          rtio::MachineTime duration);

/// Lasers idle until commanded; each command pumps both, then fires both Q
/// switches at the same machine time. Commands arriving while a shot is in
/// progress are queued behind it.
class OnDemandLaserSync {
 public:
  OnDemandLaserSync(rtio::Crate& crate, LaserSyncConfig config);

  /// Returns the time both lasers fire.
  rtio::MachineTime command(rtio::MachineTime requested_at);
  rtio::MachineTime busy_until() const { return busy_until_; }
  std::uint64_t shots() const { return shots_; }

 private:
  rtio::Crate& crate_;
  LaserSyncConfig config_;
  rtio::MachineTime busy_until_;
  std::uint64_t shots_ = 0;
};

}  // namespace circus::script
