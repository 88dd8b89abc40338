#include "circus/rtio/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "circus/error.hpp"

namespace circus::rtio {

using nlohmann::json;

std::string Channel::name() const {
  switch (kind) {
    case ChannelKind::ttl: return "ttl" + std::to_string(index);
    case ChannelKind::fastino: return "fastino" + std::to_string(index);
    case ChannelKind::hv: return "hv" + std::to_string(index);
    case ChannelKind::pulser: return "pulser" + std::to_string(index);
    case ChannelKind::rwall: return "rwall" + std::to_string(index);
  }
  return "?";
}

MachineTime MachineTime::from_seconds(double seconds) {
  return MachineTime(std::llround(seconds * 1e9));
}

std::string_view to_string(Trigger t) noexcept {
  switch (t) {
    case Trigger::ad_injection: return "ad_injection";
    case Trigger::elena_injection: return "elena_injection";
    case Trigger::bunch_pre_arrival: return "bunch_pre_arrival";
    case Trigger::bunch_arrival: return "bunch_arrival";
  }
  return "";
}

Trigger trigger_from_string(std::string_view name) {
  for (auto t : {Trigger::ad_injection, Trigger::elena_injection, Trigger::bunch_pre_arrival,
                 Trigger::bunch_arrival}) {
    if (to_string(t) == name) return t;
  }
  fail(Errc::unknown_trigger, std::string(name));
}

TtlDirection CrateConfig::ttl_direction(std::uint16_t ttl) const {
  if (ttl >= ttl_count()) fail(Errc::config_mismatch, "no TTL channel " + std::to_string(ttl));
  return ttl_batches[ttl / 4];
}

void CrateConfig::validate() const {
  if (fastino_cards == 0) fail(Errc::config_mismatch, "at least one Fastino card required");
  if (hv_channels.size() % 8 != 0) {
    fail(Errc::config_mismatch, "hv channels come in groups of 8");
  }
  if (hv_channels.size() > dac_count()) {
    fail(Errc::config_mismatch, "more hv channels than DAC channels");
  }
  for (std::size_t i = 0; i < hv_channels.size(); ++i) {
    if (!(hv_channels[i].gain > 0.0)) {
      fail(Errc::config_mismatch, "hv" + std::to_string(i) + " gain must be positive");
    }
  }
  if (hv_noise_rms < 0.0) fail(Errc::config_mismatch, "noise must be non-negative");
  if (slack < MachineTime(0)) fail(Errc::config_mismatch, "slack must be non-negative");
  for (const auto& [name, ttl] : ttl_names) {
    if (ttl >= ttl_count()) fail(Errc::config_mismatch, "TTL name " + name + " out of range");
  }
  for (const auto& [trig, ttl] : trigger_inputs) {
    if (ttl >= ttl_count() || ttl_direction(ttl) != TtlDirection::input) {
      fail(Errc::config_mismatch,
           std::string(to_string(trig)) + " must map to an input TTL channel");
    }
  }
  if (catching_trap && catching_trap->gate_ttl >= ttl_count()) {
    fail(Errc::config_mismatch, "catching trap gate out of range");
  }
  if (max_update_rate_hz && !(*max_update_rate_hz > 0.0)) {
    fail(Errc::config_mismatch, "max_update_rate_hz must be positive");
  }
}

json config_to_json(const CrateConfig& cfg) {
  json j;
  json batches = json::array();
  for (auto d : cfg.ttl_batches) batches.push_back(d == TtlDirection::input ? "input" : "output");
  j["ttl_batches"] = batches;
  j["fastino_cards"] = cfg.fastino_cards;
  json hv = json::array();
  for (const auto& ch : cfg.hv_channels) hv.push_back({{"gain", ch.gain}, {"offset", ch.offset}});
  j["hv_channels"] = hv;
  j["hv_noise_rms"] = cfg.hv_noise_rms;
  j["pulsers"] = cfg.pulsers;
  j["rwall_sectors"] = cfg.rwall_sectors;
  if (cfg.catching_trap) {
    j["catching_trap"] = {{"gate_ttl", cfg.catching_trap->gate_ttl},
                          {"low_volts", cfg.catching_trap->low_volts},
                          {"high_volts", cfg.catching_trap->high_volts}};
  }
  j["slack_mu"] = cfg.slack.mu();
  if (cfg.max_update_rate_hz) j["max_update_rate_hz"] = *cfg.max_update_rate_hz;
  j["seed"] = cfg.seed;
  j["ttl_names"] = cfg.ttl_names;
  json triggers = json::object();
  for (const auto& [t, ttl] : cfg.trigger_inputs) triggers[std::string(to_string(t))] = ttl;
  j["trigger_inputs"] = triggers;
  j["ad_to_elena_mu"] = cfg.ad_to_elena.mu();
  j["cycle_gap_mu"] = cfg.cycle_gap.mu();
  j["pre_arrival_lead_mu"] = cfg.pre_arrival_lead.mu();
  j["trigger_width_mu"] = cfg.trigger_width.mu();
  return j;
}

CrateConfig config_from_json(const json& j) {
  if (!j.is_object()) fail(Errc::config_mismatch, "crate config must be an object");
  if (!j.contains("seed")) fail(Errc::config_mismatch, "crate config requires a seed");
  CrateConfig cfg;
  try {
    cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("ttl_batches")) {
      cfg.ttl_batches.clear();
      for (const auto& d : j.at("ttl_batches")) {
        auto s = d.get<std::string>();
        if (s != "input" && s != "output") fail(Errc::config_mismatch, "bad TTL direction " + s);
        cfg.ttl_batches.push_back(s == "input" ? TtlDirection::input : TtlDirection::output);
      }
    }
    cfg.fastino_cards = j.value("fastino_cards", cfg.fastino_cards);
    if (j.contains("hv_channels")) {
      cfg.hv_channels.clear();
      for (const auto& ch : j.at("hv_channels")) {
        cfg.hv_channels.push_back({ch.value("gain", 20.0), ch.value("offset", 0.0)});
      }
    }
    cfg.hv_noise_rms = j.value("hv_noise_rms", cfg.hv_noise_rms);
    cfg.pulsers = j.value("pulsers", cfg.pulsers);
    cfg.rwall_sectors = j.value("rwall_sectors", cfg.rwall_sectors);
    if (j.contains("catching_trap")) {
      const auto& t = j.at("catching_trap");
      cfg.catching_trap = CatchingTrapModel{t.value("gate_ttl", std::uint16_t{0}),
                                            t.value("low_volts", 0.0), t.value("high_volts", 15000.0)};
    }
    cfg.slack = MachineTime(j.value("slack_mu", cfg.slack.mu()));
    if (j.contains("max_update_rate_hz")) cfg.max_update_rate_hz = j.at("max_update_rate_hz").get<double>();
    if (j.contains("ttl_names")) cfg.ttl_names = j.at("ttl_names").get<std::map<std::string, std::uint16_t>>();
    if (j.contains("trigger_inputs")) {
      cfg.trigger_inputs.clear();
      for (auto it = j.at("trigger_inputs").begin(); it != j.at("trigger_inputs").end(); ++it) {
        cfg.trigger_inputs[trigger_from_string(it.key())] = it.value().get<std::uint16_t>();
      }
    }
    cfg.ad_to_elena = MachineTime(j.value("ad_to_elena_mu", cfg.ad_to_elena.mu()));
    cfg.cycle_gap = MachineTime(j.value("cycle_gap_mu", cfg.cycle_gap.mu()));
    cfg.pre_arrival_lead = MachineTime(j.value("pre_arrival_lead_mu", cfg.pre_arrival_lead.mu()));
    cfg.trigger_width = MachineTime(j.value("trigger_width_mu", cfg.trigger_width.mu()));
  } catch (const json::exception& e) {
    fail(Errc::config_mismatch, e.what());
  }
  cfg.validate();
  return cfg;
}

CrateConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_error, "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    fail(Errc::malformed_document, e.what());
  }
  return config_from_json(j);
}

void save_config(const CrateConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(Errc::io_error, "cannot write " + path.string());
  out << config_to_json(cfg).dump(2) << '\n';
}

}  // namespace circus::rtio
