#include "circus/script/laser_sync.hpp"

#include <algorithm>
#include <cmath>

#include "circus/error.hpp"
#include "circus/script/engine.hpp"

namespace circus::script {

using rtio::Channel;
using rtio::MachineTime;
using rtio::TtlSet;

void LaserSyncConfig::validate(const rtio::CrateConfig& crate) const {
  auto output = [&](std::uint16_t ttl) {
    if (ttl >= crate.ttl_count() || crate.ttl_direction(ttl) != rtio::TtlDirection::output) {
      fail(Errc::config_mismatch, "ttl" + std::to_string(ttl) + " is not an output line");
    }
  };
  output(laser_a);
  output(laser_b);
  if (pump_a) output(*pump_a);
  if (pump_b) output(*pump_b);
  if (laser_a == laser_b) fail(Errc::config_mismatch, "the two lasers need distinct trigger lines");
  if (!(rate_a_hz > 0.0) || !(rate_b_hz > 0.0)) fail(Errc::invalid_argument, "repetition rates must be positive");
  if (pulse_width <= MachineTime(0)) fail(Errc::invalid_argument, "pulse width must be positive");
  if (pulse_width >= std::min(period_a(), period_b())) {
    fail(Errc::invalid_argument, "pulse width must be shorter than both periods");
  }
  if (realign < std::max(period_a(), period_b())) fail(Errc::invalid_argument, "realignment shorter than a period");
}

MachineTime LaserSyncConfig::period_a() const { return MachineTime(std::llround(1e9 / rate_a_hz)); }
MachineTime LaserSyncConfig::period_b() const { return MachineTime(std::llround(1e9 / rate_b_hz)); }

ContinuousLaserSync::ContinuousLaserSync(rtio::Crate& crate, LaserSyncConfig config, MachineTime start)
    : crate_(crate), config_(config), start_(start) {
  config_.validate(crate_.config());
  a_.ttl = config_.laser_a;
  a_.period = config_.period_a();
  b_.ttl = config_.laser_b;
  b_.period = config_.period_b();
}

MachineTime ContinuousLaserSync::next_time(Train& t) const {
  const auto boundary = [&](std::uint64_t k) { return start_ + config_.realign * static_cast<std::int64_t>(k); };
  auto at = boundary(t.window) + t.period * static_cast<std::int64_t>(t.index);
  // A shot within half a period of the next boundary is that boundary's shot.
  if (at + MachineTime(t.period.mu() / 2) > boundary(t.window + 1)) {
    ++t.window;
    t.index = 0;
    at = boundary(t.window);
  }
  return at;
}

void ContinuousLaserSync::schedule_until(Train& t, MachineTime until) {
  for (auto at = next_time(t); at <= until; at = next_time(t)) {
    crate_.schedule_all({{at, Channel::ttl(t.ttl), TtlSet{true}},
                         {at + config_.pulse_width, Channel::ttl(t.ttl), TtlSet{false}}});
    ++t.index;
    ++t.count;
  }
}

void ContinuousLaserSync::advance(MachineTime until) {
  if (stopped_) return;
  // One realignment window at a time keeps the queue short.
  for (auto t = std::max(crate_.now(), start_); t < until;) {
    t = std::min(until, t + config_.realign);
    schedule_until(a_, t);
    schedule_until(b_, t);
    crate_.run_until(t);
  }
  schedule_until(a_, until);
  schedule_until(b_, until);
  crate_.run_until(std::max(crate_.now(), until));
}

void ContinuousLaserSync::stop() {
  if (stopped_) return;
  stopped_ = true;
  crate_.run_until(crate_.now() + config_.pulse_width);
}

rtio::WaveformTrace laser_sync_continuous(rtio::Crate& crate, const LaserSyncConfig& config, MachineTime start,
                                          MachineTime duration) {
  ContinuousLaserSync sync(crate, config, start);
  sync.advance(start + duration);
  sync.stop();
  return trace_since(crate.trace(), start);
}

OnDemandLaserSync::OnDemandLaserSync(rtio::Crate& crate, LaserSyncConfig config)
    : crate_(crate), config_(config), busy_until_(crate.now()) {
  config_.validate(crate_.config());
}

MachineTime OnDemandLaserSync::command(MachineTime requested_at) {
  const auto start = std::max({requested_at, busy_until_, crate_.earliest()});
  const bool pumped = config_.pump_a || config_.pump_b;
  const auto fire = pumped ? start + config_.pump_lead : start;
  std::vector<rtio::TimelineEvent> events;
  for (auto pump : {config_.pump_a, config_.pump_b}) {
    if (!pump) continue;
    events.push_back({start, Channel::ttl(*pump), TtlSet{true}});
    events.push_back({fire, Channel::ttl(*pump), TtlSet{false}});
  }
  for (auto laser : {config_.laser_a, config_.laser_b}) {
    events.push_back({fire, Channel::ttl(laser), TtlSet{true}});
    events.push_back({fire + config_.pulse_width, Channel::ttl(laser), TtlSet{false}});
  }
  crate_.schedule_all(events);
  busy_until_ = fire + config_.pulse_width;
  ++shots_;
  return fire;
}

}  // namespace circus::script
