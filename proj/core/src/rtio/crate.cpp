#include "circus/rtio/crate.hpp"

#include <algorithm>
#include <cmath>

#include "circus/error.hpp"

namespace circus::rtio {

namespace {

constexpr std::uint16_t kPowerOnCode = 32768;
constexpr double kMaxSineFrequency = 30e6;
constexpr double kMaxSineAmplitude = 5.0;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string mu_text(MachineTime t) { return std::to_string(t.mu()) + " mu"; }

}  // namespace

Crate::Crate(CrateConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto ttl = config_.ttl_count();
  const auto dac = config_.dac_count();
  const auto hv = config_.hv_channels.size();
  ttl_level_.assign(ttl, false);
  rising_edges_.assign(ttl, {});
  gated_.assign(ttl, std::nullopt);
  dac_code_pending_.assign(dac, kPowerOnCode);
  dac_code_out_.assign(dac, kPowerOnCode);
  last_update_.assign(dac, std::nullopt);
  relay_open_.assign(hv, true);
  hv_history_.resize(hv);
  for (std::size_t i = 0; i < hv; ++i) {
    hv_history_[i].push_back({MachineTime(0), kPowerOnCode, true});
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed), static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(i)};
    noise_rng_.emplace_back(seq);
  }
}

void Crate::check_event(const TimelineEvent& ev) const {
  if (ev.at < earliest()) {
    fail(Errc::underflow, ev.channel.name() + " event at " + mu_text(ev.at) + " is before now+slack = " +
                              mu_text(earliest()));
  }
  const auto idx = ev.channel.index;
  std::visit(
      overloaded{
          [&](const TtlSet&) {
            if (ev.channel.kind != ChannelKind::ttl) fail(Errc::invalid_argument, "ttl_set needs a TTL channel");
            if (config_.ttl_direction(idx) != TtlDirection::output) {
              fail(Errc::direction_error, ev.channel.name() + " is configured as input");
            }
          },
          [&](const DacWord& w) {
            if (ev.channel.kind != ChannelKind::fastino || idx >= config_.fastino_cards) {
              fail(Errc::invalid_argument, "dac_word needs an existing Fastino card");
            }
            if (w.dac_channel >= 32) fail(Errc::invalid_argument, "Fastino channel index must be < 32");
          },
          [&](const DacUpdate& u) {
            if (ev.channel.kind != ChannelKind::fastino || idx >= config_.fastino_cards) {
              fail(Errc::invalid_argument, "dac_update needs an existing Fastino card");
            }
            if (config_.max_update_rate_hz) {
              const auto min_gap = MachineTime::from_seconds(1.0 / *config_.max_update_rate_hz);
              for (std::uint16_t k = 0; k < 32; ++k) {
                if (!(u.mask & (1u << k))) continue;
                const auto& last = last_update_[idx * 32 + k];
                if (last && ev.at - *last < min_gap && ev.at != *last) {
                  fail(Errc::rate_exceeded, "dac" + std::to_string(idx * 32 + k) + " updated too fast");
                }
              }
            }
          },
          [&](const RelaySet&) {
            if (ev.channel.kind != ChannelKind::hv || idx >= config_.hv_channels.size()) {
              fail(Errc::invalid_argument, "relay needs an existing hv channel");
            }
          },
          [&](const PulseFire& p) {
            if (ev.channel.kind != ChannelKind::pulser || idx >= config_.pulsers) {
              fail(Errc::invalid_argument, "pulse needs an existing pulser");
            }
            if (p.width <= MachineTime(0)) fail(Errc::invalid_argument, "pulse width must be positive");
          },
          [&](const SineSet& s) {
            if (ev.channel.kind != ChannelKind::rwall || idx >= config_.rwall_sectors) {
              fail(Errc::invalid_argument, "sine needs an existing rotating-wall sector");
            }
            if (s.frequency_hz < 0.0 || s.frequency_hz > kMaxSineFrequency) {
              fail(Errc::invalid_argument, "rotating-wall frequency must be within 0..30 MHz");
            }
            if (s.amplitude_v < 0.0 || s.amplitude_v > kMaxSineAmplitude) {
              fail(Errc::invalid_argument, "rotating-wall amplitude must be within 0..5 V");
            }
          },
      },
      ev.action);
}

void Crate::enqueue(MachineTime at, Item item) {
  queue_.emplace(Key{at.mu(), seq_++}, std::move(item));
}

void Crate::schedule(const TimelineEvent& ev) {
  check_event(ev);
  if (auto u = std::get_if<DacUpdate>(&ev.action)) {
    for (std::uint16_t k = 0; k < 32; ++k) {
      if (u->mask & (1u << k)) last_update_[ev.channel.index * 32 + k] = ev.at;
    }
  }
  enqueue(ev.at, ev);
}

void Crate::schedule_all(const std::vector<TimelineEvent>& events) {
  for (const auto& ev : events) check_event(ev);
  for (const auto& ev : events) schedule(ev);
}

double Crate::amplifier(std::uint16_t hv, std::uint16_t code, bool open) const {
  if (open) return 0.0;
  const auto& m = config_.hv_channels[hv];
  return m.gain * dac_volts(code) + m.offset;
}

void Crate::record_hv(std::uint16_t hv, MachineTime at, WaveformTrace& out) {
  const auto code = dac_code_out_[hv];
  hv_history_[hv].push_back({at, code, relay_open_[hv]});
  out.record("hv" + std::to_string(hv), at, amplifier(hv, code, relay_open_[hv]));
}

void Crate::execute(MachineTime at, const Item& item, WaveformTrace& out) {
  std::visit(
      overloaded{
          [&](const TimelineEvent& ev) {
            const auto idx = ev.channel.index;
            std::visit(
                overloaded{
                    [&](const TtlSet& s) {
                      ttl_level_[idx] = s.level;
                      out.record(ev.channel.name(), at, s.level ? 1.0 : 0.0);
                      if (config_.catching_trap && config_.catching_trap->gate_ttl == idx) {
                        out.record("trap", at,
                                   s.level ? config_.catching_trap->high_volts : config_.catching_trap->low_volts);
                      }
                    },
                    [&](const DacWord& w) { dac_code_pending_[idx * 32 + w.dac_channel] = w.code; },
                    [&](const DacUpdate& u) {
                      for (std::uint16_t k = 0; k < 32; ++k) {
                        if (!(u.mask & (1u << k))) continue;
                        const auto dac = static_cast<std::uint16_t>(idx * 32 + k);
                        dac_code_out_[dac] = dac_code_pending_[dac];
                        out.record("dac" + std::to_string(dac), at, dac_volts(dac_code_out_[dac]));
                        if (dac < config_.hv_channels.size()) record_hv(dac, at, out);
                      }
                    },
                    [&](const RelaySet& r) {
                      relay_open_[idx] = r.open;
                      out.record("relay" + std::to_string(idx), at, r.open ? 1.0 : 0.0);
                      record_hv(idx, at, out);
                    },
                    [&](const PulseFire& p) {
                      out.record(ev.channel.name(), at, 1.0);
                      enqueue(at + p.width, PulseEnd{idx});
                    },
                    [&](const SineSet& s) { out.sines.push_back({at, idx, s}); },
                },
                ev.action);
          },
          [&](const InputEdge& e) {
            ttl_level_[e.ttl] = e.rising;
            out.record("ttl" + std::to_string(e.ttl), at, e.rising ? 1.0 : 0.0);
          },
          [&](const PulseEnd& p) { out.record("pulser" + std::to_string(p.pulser), at, 0.0); },
      },
      item);
}

WaveformTrace Crate::run_until(MachineTime t) {
  if (t < now_) fail(Errc::invalid_argument, "run_until into the past");
  WaveformTrace delta;
  while (!queue_.empty() && queue_.begin()->first.at <= t.mu()) {
    auto node = queue_.extract(queue_.begin());
    execute(MachineTime(node.key().at), node.mapped(), delta);
  }
  now_ = t;
  trace_.append(delta);
  return delta;
}

std::optional<MachineTime> Crate::gate_rising(std::uint16_t ttl, MachineTime window) {
  if (config_.ttl_direction(ttl) != TtlDirection::input) {
    fail(Errc::direction_error, "ttl" + std::to_string(ttl) + " is configured as output");
  }
  const auto& edges = rising_edges_[ttl];
  auto it = std::lower_bound(edges.begin(), edges.end(), now_);
  if (it != edges.end() && gated_[ttl] && *it <= *gated_[ttl]) it = std::upper_bound(it, edges.end(), *gated_[ttl]);
  const auto end = now_ + window;
  if (it != edges.end() && *it <= end) {
    const auto edge = *it;
    gated_[ttl] = edge;
    run_until(edge);
    return edge;
  }
  run_until(end);
  return std::nullopt;
}

void Crate::inject_edge(std::uint16_t ttl, MachineTime at, bool rising) {
  if (config_.ttl_direction(ttl) != TtlDirection::input) {
    fail(Errc::direction_error, "ttl" + std::to_string(ttl) + " is configured as output");
  }
  if (at < now_) fail(Errc::invalid_argument, "cannot inject an edge into the executed past");
  if (rising) {
    auto& edges = rising_edges_[ttl];
    edges.insert(std::upper_bound(edges.begin(), edges.end(), at), at);
  }
  enqueue(at, InputEdge{ttl, rising});
}

void Crate::inject_trigger(Trigger trigger, MachineTime at) {
  auto it = config_.trigger_inputs.find(trigger);
  if (it == config_.trigger_inputs.end()) {
    fail(Errc::unknown_trigger, std::string(to_string(trigger)) + " is not wired");
  }
  inject_edge(it->second, at, true);
  inject_edge(it->second, at + config_.trigger_width, false);
}

void Crate::inject_trigger(std::string_view name, MachineTime at) {
  if (auto it = config_.ttl_names.find(std::string(name)); it != config_.ttl_names.end()) {
    inject_edge(it->second, at, true);
    inject_edge(it->second, at + config_.trigger_width, false);
    return;
  }
  inject_trigger(trigger_from_string(name), at);
}

MachineTime Crate::inject_cycle(MachineTime t_ad) {
  const auto elena = t_ad + config_.ad_to_elena;
  const auto bunch = elena + config_.cycle_gap;
  inject_trigger(Trigger::ad_injection, t_ad);
  inject_trigger(Trigger::elena_injection, elena);
  inject_trigger(Trigger::bunch_pre_arrival, bunch - config_.pre_arrival_lead);
  inject_trigger(Trigger::bunch_arrival, bunch);
  return bunch;
}

DmaHandle Crate::dma_record(std::string name, std::vector<TimelineEvent> events) {
  for (const auto& ev : events) {
    if (ev.at < MachineTime(0)) fail(Errc::invalid_argument, "DMA events use relative times >= 0");
  }
  std::stable_sort(events.begin(), events.end(),
                   [](const TimelineEvent& a, const TimelineEvent& b) { return a.at < b.at; });
  for (std::size_t i = 0; i < dma_.size(); ++i) {
    if (dma_[i].name == name) {
      dma_[i].events = std::move(events);
      return DmaHandle{static_cast<std::uint32_t>(i)};
    }
  }
  dma_.push_back({std::move(name), std::move(events)});
  return DmaHandle{static_cast<std::uint32_t>(dma_.size() - 1)};
}

std::optional<DmaHandle> Crate::dma_find(const std::string& name) const {
  for (std::size_t i = 0; i < dma_.size(); ++i) {
    if (dma_[i].name == name) return DmaHandle{static_cast<std::uint32_t>(i)};
  }
  return std::nullopt;
}

void Crate::dma_playback(DmaHandle handle, MachineTime t0) {
  if (handle.id >= dma_.size()) fail(Errc::invalid_argument, "unknown DMA handle");
  const auto& seq = dma_[handle.id].events;
  if (seq.empty()) return;
  std::vector<TimelineEvent> absolute;
  absolute.reserve(seq.size());
  for (auto ev : seq) {
    ev.at += t0;
    absolute.push_back(ev);
  }
  schedule_all(absolute);
}

double Crate::hv_output(std::uint16_t hv, MachineTime t) {
  if (hv >= hv_history_.size()) fail(Errc::invalid_argument, "no hv channel " + std::to_string(hv));
  if (t > now_) fail(Errc::invalid_argument, "hv_output can only be read up to now");
  const auto& h = hv_history_[hv];
  auto it = std::upper_bound(h.begin(), h.end(), t, [](MachineTime x, const HvState& s) { return x < s.at; });
  const auto& state = *std::prev(it);
  if (state.open) return 0.0;
  std::normal_distribution<double> noise(0.0, config_.hv_noise_rms);
  const double n = config_.hv_noise_rms > 0.0 ? noise(noise_rng_[hv]) : 0.0;
  return amplifier(hv, state.code, false) + n;
}

double Crate::hv_setpoint(std::uint16_t hv) const {
  if (hv >= relay_open_.size()) fail(Errc::invalid_argument, "no hv channel " + std::to_string(hv));
  return amplifier(hv, dac_code_out_[hv], relay_open_[hv]);
}

}  // namespace circus::rtio
