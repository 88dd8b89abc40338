#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "circus/rtio/config.hpp"
#include "circus/rtio/dac.hpp"
#include "circus/rtio/trace.hpp"
#include "circus/rtio/types.hpp"

namespace circus::rtio {

struct DmaHandle {
  std::uint32_t id = 0;
  bool operator==(const DmaHandle&) const = default;
};

/// Deterministic simulation of one crate: a machine-unit clock, a FIFO
/// output timeline executed in timestamp order (ties in submission order),
/// TTL input gating, DMA playback, Fastino DACs and the amplifier bank.
///
/// A crate has a single owner; it is movable but not shareable.
class Crate {
 public:
  explicit Crate(CrateConfig config);

  Crate(Crate&&) noexcept = default;
  Crate& operator=(Crate&&) noexcept = default;
  Crate(const Crate&) = delete;
  Crate& operator=(const Crate&) = delete;

  const CrateConfig& config() const { return config_; }
  MachineTime now() const { return now_; }
  /// Earliest timestamp that `schedule` accepts.
  MachineTime earliest() const { return now_ + config_.slack; }

  /// Throws Underflow when ev.at < now + slack; the timeline is unchanged.
  void schedule(const TimelineEvent& ev);
  /// All-or-nothing submission of several events.
  void schedule_all(const std::vector<TimelineEvent>& events);

  /// Advances the clock to t, executing every due event. Returns the trace
  /// segment produced by this call.
  WaveformTrace run_until(MachineTime t);

  /// Waits up to `window` for a rising edge on an input line. Advances the
  /// clock to the edge (or to the end of the window) and returns its time.
  std::optional<MachineTime> gate_rising(std::uint16_t ttl, MachineTime window);

  void inject_edge(std::uint16_t ttl, MachineTime at, bool rising);
  void inject_trigger(Trigger trigger, MachineTime at);
  /// A named TTL line ("Trigger") or a cascade trigger ("bunch_arrival").
  void inject_trigger(std::string_view name, MachineTime at);
  /// Injects AD injection at t_ad, then ELENA injection, bunch pre-arrival and
  /// bunch arrival per the configured gaps. Returns the bunch arrival time.
  MachineTime inject_cycle(MachineTime t_ad);

  /// Events carry times relative to playback start (>= 0).
  DmaHandle dma_record(std::string name, std::vector<TimelineEvent> events);
  std::optional<DmaHandle> dma_find(const std::string& name) const;
  void dma_playback(DmaHandle handle, MachineTime t0);

  /// Amplifier output at time t <= now, including one draw of readout noise.
  double hv_output(std::uint16_t hv, MachineTime t);
  double hv_output(std::uint16_t hv) { return hv_output(hv, now_); }
  /// Noiseless amplifier output currently latched.
  double hv_setpoint(std::uint16_t hv) const;
  std::uint16_t dac_output_code(std::uint16_t dac) const { return dac_code_out_.at(dac); }
  bool relay_open(std::uint16_t hv) const { return relay_open_.at(hv); }
  bool ttl_level(std::uint16_t ttl) const { return ttl_level_.at(ttl); }

  /// Everything executed since construction.
  const WaveformTrace& trace() const { return trace_; }
  std::size_t pending() const { return queue_.size(); }

 private:
  struct InputEdge {
    std::uint16_t ttl;
    bool rising;
  };
  struct PulseEnd {
    std::uint16_t pulser;
  };
  using Item = std::variant<TimelineEvent, InputEdge, PulseEnd>;
  struct Key {
    std::int64_t at;
    std::uint64_t seq;
    auto operator<=>(const Key&) const = default;
  };
  struct HvState {
    MachineTime at;
    std::uint16_t code;
    bool open;
  };
  struct DmaSequence {
    std::string name;
    std::vector<TimelineEvent> events;
  };

  void check_event(const TimelineEvent& ev) const;
  void enqueue(MachineTime at, Item item);
  void execute(MachineTime at, const Item& item, WaveformTrace& out);
  double amplifier(std::uint16_t hv, std::uint16_t code, bool open) const;
  void record_hv(std::uint16_t hv, MachineTime at, WaveformTrace& out);

  CrateConfig config_;
  MachineTime now_{0};
  std::uint64_t seq_ = 0;
  std::map<Key, Item> queue_;
  std::vector<bool> ttl_level_;
  std::vector<std::vector<MachineTime>> rising_edges_;
  /// Last edge each input's gate returned; a gate never returns it again.
  std::vector<std::optional<MachineTime>> gated_;
  std::vector<std::uint16_t> dac_code_pending_;
  std::vector<std::uint16_t> dac_code_out_;
  std::vector<std::optional<MachineTime>> last_update_;
  std::vector<bool> relay_open_;
  std::vector<std::vector<HvState>> hv_history_;
  std::vector<std::mt19937_64> noise_rng_;
  std::vector<DmaSequence> dma_;
  WaveformTrace trace_;
};

}  // namespace circus::rtio
