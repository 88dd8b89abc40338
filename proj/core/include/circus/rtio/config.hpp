#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circus/rtio/types.hpp"

namespace circus::rtio {

enum class TtlDirection { input, output };

/// One amplifier channel. Output = gain * dac_volts + offset (+ noise on readout).
struct HvChannelModel {
  double gain = 20.0;
  double offset = 0.0;
};

/// Catching-trap electrode: a TTL-gated channel switching between two levels.
struct CatchingTrapModel {
  std::uint16_t gate_ttl = 0;
  double low_volts = 0.0;
  double high_volts = 15'000.0;
};

struct CrateConfig {
  /// Direction per batch of four TTL lines; channel i lives in batch i / 4.
  std::vector<TtlDirection> ttl_batches{TtlDirection::input, TtlDirection::output,
                                        TtlDirection::output, TtlDirection::output};
  std::uint16_t fastino_cards = 1;
  /// Amplifier channels, a multiple of 8; hv channel i is driven by DAC
  /// channel i % 32 on Fastino card i / 32.
  std::vector<HvChannelModel> hv_channels = std::vector<HvChannelModel>(8);
  double hv_noise_rms = 1e-3;
  std::uint16_t pulsers = 0;
  std::uint16_t rwall_sectors = 0;
  std::optional<CatchingTrapModel> catching_trap;
  MachineTime slack = MachineTime::us(1);
  /// Per-DAC-channel update limit; unset means unconstrained.
  std::optional<double> max_update_rate_hz;
  std::uint64_t seed = 0;

  /// Named TTL lines, e.g. "Trigger", "laser_a", "pockels".
  std::map<std::string, std::uint16_t> ttl_names{{"Trigger", 0}};
  std::map<Trigger, std::uint16_t> trigger_inputs{{Trigger::ad_injection, 0},
                                                  {Trigger::elena_injection, 1},
                                                  {Trigger::bunch_pre_arrival, 2},
                                                  {Trigger::bunch_arrival, 3}};
  /// AD injection to ELENA injection; the whole AD cycle is ~120 s.
  MachineTime ad_to_elena = MachineTime::s(90);
  /// ELENA injection to bunch arrival.
  MachineTime cycle_gap = MachineTime::s(30);
  MachineTime pre_arrival_lead = MachineTime::us(20);
  /// Width of injected trigger pulses.
  MachineTime trigger_width = MachineTime::us(1);

  std::uint16_t ttl_count() const { return static_cast<std::uint16_t>(ttl_batches.size() * 4); }
  std::uint16_t dac_count() const { return static_cast<std::uint16_t>(fastino_cards * 32); }
  TtlDirection ttl_direction(std::uint16_t ttl) const;

  /// Throws ConfigMismatch describing the first broken invariant.
  void validate() const;
};

nlohmann::json config_to_json(const CrateConfig& cfg);
/// The seed field is mandatory so runs stay reproducible.
CrateConfig config_from_json(const nlohmann::json& j);
CrateConfig load_config(const std::filesystem::path& path);
void save_config(const CrateConfig& cfg, const std::filesystem::path& path);

}  // namespace circus::rtio
