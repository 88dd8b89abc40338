#include "circus/script/context.hpp"

#include <algorithm>

#include "circus/error.hpp"

namespace circus::script {

using rtio::Channel;
using rtio::MachineTime;
using rtio::TimelineEvent;

NodeBridge::NodeBridge(actor::Node& node, std::string requester)
    : node_(node), requester_{node.name(), std::move(requester)} {}

std::optional<actor::Address> NodeBridge::resolve(const std::string& service) const {
  if (auto a = node_.resolve_kind(service)) return a;
  const auto local = node_.services();
  if (std::find(local.begin(), local.end(), service) != local.end()) return actor::Address{node_.name(), service};
  return std::nullopt;
}

bool NodeBridge::has_service(const std::string& service) const { return resolve(service).has_value(); }

DataAtom NodeBridge::call(const std::string& service, const std::string& command, DataAtom payload,
                          Duration timeout) {
  const auto dst = resolve(service);
  if (!dst) fail(Errc::unknown_service, "no service " + service);
  actor::Envelope env;
  env.src = requester_;
  env.dst = *dst;
  env.kind = command;
  env.payload = std::move(payload);
  try {
    return node_.request(std::move(env), timeout).payload;
  } catch (const Error& e) {
    if (e.code() == Errc::unknown_destination) fail(Errc::unknown_service, e.what());
    throw;
  }
}

void LoopbackBridge::add(std::string service, Handler handler) { handlers_[std::move(service)] = std::move(handler); }

bool LoopbackBridge::has_service(const std::string& service) const { return handlers_.count(service) > 0; }

DataAtom LoopbackBridge::call(const std::string& service, const std::string& command, DataAtom payload, Duration) {
  auto it = handlers_.find(service);
  if (it == handlers_.end()) fail(Errc::unknown_service, "no service " + service);
  return it->second(command, payload);
}

void ScriptContext::note(const std::string& line) { log.push_back(timestamp_now().display + " " + line); }

void ScriptContext::warn(const std::string& line) {
  warnings.push_back(line);
  note("warning: " + line);
}

rtio::DacConversion hv_code(ScriptContext& ctx, std::uint16_t hv, double volts, bool quiet) {
  auto it = ctx.calibration.find(hv);
  if (it != ctx.calibration.end()) return autotune::apply_calibration(it->second, volts);
  if (!quiet) ctx.warn("hv" + std::to_string(hv) + " has no calibration; using the nominal gain");
  return autotune::apply_calibration(autotune::CalibrationRecord::nominal(hv), volts);
}

namespace {

/// DAC words for every pair followed by one update strobe per card, all at `at`.
std::vector<TimelineEvent> voltage_events(ScriptContext& ctx, MachineTime at, const std::vector<VoltagePair>& pairs,
                                          bool init) {
  std::vector<TimelineEvent> events;
  std::map<std::uint16_t, std::uint32_t> masks;
  for (const auto& p : pairs) {
    const auto conv = hv_code(ctx, p.hv, p.volts, init);
    if (conv.clamped) ctx.warn("hv" + std::to_string(p.hv) + " request clamped to the DAC range");
    const auto card = static_cast<std::uint16_t>(p.hv / 32);
    const auto local = static_cast<std::uint8_t>(p.hv % 32);
    events.push_back({at, Channel::fastino(card), rtio::DacWord{local, conv.code}});
    masks[card] |= 1u << local;
  }
  for (const auto& [card, mask] : masks) events.push_back({at, Channel::fastino(card), rtio::DacUpdate{mask}});
  if (init) {
    for (const auto& p : pairs) events.push_back({at, Channel::hv(p.hv), rtio::RelaySet{false}});
  }
  return events;
}

}  // namespace

void init_outputs(ScriptContext& ctx) {
  const auto t = ctx.crate.earliest();
  std::vector<VoltagePair> zeros;
  for (std::uint16_t i = 0; i < ctx.crate.config().hv_channels.size(); ++i) zeros.push_back({i, 0.0});
  ctx.crate.schedule_all(voltage_events(ctx, t, zeros, true));
  ctx.crate.run_until(t);
  ctx.cursor = ctx.crate.earliest();
  ctx.horizon = std::max(ctx.horizon, t);
}

Program build_and_init(ScriptContext& ctx, const ExperimentScript& script, const ParamValues& params) {
  auto program = compile(script, params, ctx.crate.config());
  for (const auto& service : referenced_services(program)) {
    if (!ctx.bridge || !ctx.bridge->has_service(service)) {
      fail(Errc::unknown_service, script.name + " calls unknown service " + service);
    }
  }
  init_outputs(ctx);
  ctx.note("init " + script.name);
  return program;
}

void set_voltages(ScriptContext& ctx, MachineTime at, const std::vector<VoltagePair>& pairs) {
  if (pairs.empty()) return;
  ctx.crate.schedule_all(voltage_events(ctx, at, pairs, false));
  ctx.horizon = std::max(ctx.horizon, at);
}

MachineTime set_voltages_at_trigger(ScriptContext& ctx, const std::string& trigger, MachineTime delay,
                                    const std::vector<VoltagePair>& pairs, MachineTime window) {
  const auto ttl = resolve_trigger_input(ctx.crate.config(), trigger);
  const auto t = ctx.crate.gate_rising(ttl, window);
  if (!t) fail(Errc::trigger_timeout, "no " + trigger + " edge within " + std::to_string(window.seconds()) + " s");
  set_voltages(ctx, *t + delay, pairs);
  ctx.cursor = *t + delay;
  return *t;
}

DataAtom call_service(ScriptContext& ctx, const std::string& service, const std::string& command, DataAtom payload,
                      Duration timeout) {
  if (!ctx.bridge) fail(Errc::unknown_service, "no bus attached for " + service);
  return ctx.bridge->call(service, command, std::move(payload), timeout);
}

}  // namespace circus::script
