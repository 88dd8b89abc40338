#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <variant>

namespace circus::rtio {

/// Timeline position in machine units; 1 mu = 1 ns.
class MachineTime {
 public:
  constexpr MachineTime() = default;
  constexpr explicit MachineTime(std::int64_t mu) : mu_(mu) {}

  static constexpr MachineTime ns(std::int64_t v) { return MachineTime(v); }
  static constexpr MachineTime us(std::int64_t v) { return MachineTime(v * 1'000); }
  static constexpr MachineTime ms(std::int64_t v) { return MachineTime(v * 1'000'000); }
  static constexpr MachineTime s(std::int64_t v) { return MachineTime(v * 1'000'000'000); }
  /// Rounds to the nearest machine unit.
  static MachineTime from_seconds(double seconds);

  constexpr std::int64_t mu() const { return mu_; }
  constexpr double seconds() const { return static_cast<double>(mu_) * 1e-9; }

  constexpr auto operator<=>(const MachineTime&) const = default;
  constexpr MachineTime operator+(MachineTime o) const { return MachineTime(mu_ + o.mu_); }
  constexpr MachineTime operator-(MachineTime o) const { return MachineTime(mu_ - o.mu_); }
  constexpr MachineTime& operator+=(MachineTime o) { mu_ += o.mu_; return *this; }
  constexpr MachineTime& operator-=(MachineTime o) { mu_ -= o.mu_; return *this; }
  constexpr MachineTime operator*(std::int64_t k) const { return MachineTime(mu_ * k); }

 private:
  std::int64_t mu_ = 0;
};

enum class ChannelKind : std::uint8_t {
  ttl,      // digital I/O line
  fastino,  // 32-channel DAC card; dac_word carries the card-local index
  hv,       // high-voltage amplifier channel (relay target)
  pulser,   // settable-width pulse generator
  rwall,    // rotating-wall synthesizer sector
};

struct Channel {
  ChannelKind kind = ChannelKind::ttl;
  std::uint16_t index = 0;

  static constexpr Channel ttl(std::uint16_t i) { return {ChannelKind::ttl, i}; }
  static constexpr Channel fastino(std::uint16_t i) { return {ChannelKind::fastino, i}; }
  static constexpr Channel hv(std::uint16_t i) { return {ChannelKind::hv, i}; }
  static constexpr Channel pulser(std::uint16_t i) { return {ChannelKind::pulser, i}; }
  static constexpr Channel rwall(std::uint16_t i) { return {ChannelKind::rwall, i}; }

  auto operator<=>(const Channel&) const = default;
  std::string name() const;
};

struct TtlSet { bool level = false; bool operator==(const TtlSet&) const = default; };
struct DacWord {
  std::uint8_t dac_channel = 0;  // 0..31 on the addressed Fastino
  std::uint16_t code = 0;
  bool operator==(const DacWord&) const = default;
};
struct DacUpdate { std::uint32_t mask = 0; bool operator==(const DacUpdate&) const = default; };
struct RelaySet { bool open = false; bool operator==(const RelaySet&) const = default; };
struct PulseFire { MachineTime width; bool operator==(const PulseFire&) const = default; };
struct SineSet {
  double frequency_hz = 0.0;  // 0..30 MHz
  double amplitude_v = 0.0;   // <= 5 V
  double phase_rad = 0.0;
  bool operator==(const SineSet&) const = default;
};

using Action = std::variant<TtlSet, DacWord, DacUpdate, RelaySet, PulseFire, SineSet>;

struct TimelineEvent {
  MachineTime at;
  Channel channel;
  Action action;
  bool operator==(const TimelineEvent&) const = default;
};

enum class Trigger { ad_injection, elena_injection, bunch_pre_arrival, bunch_arrival };

std::string_view to_string(Trigger t) noexcept;
/// Throws UnknownTrigger.
Trigger trigger_from_string(std::string_view name);

}  // namespace circus::rtio
