#include "circus/script/engine.hpp"

#include <algorithm>

#include "circus/daq/daq_service.hpp"
#include "circus/error.hpp"

namespace circus::script {

using rtio::Channel;
using rtio::MachineTime;
using rtio::TimelineEvent;

std::string_view to_string(RunStatus s) noexcept {
  switch (s) {
    case RunStatus::success: return "success";
    case RunStatus::retryable: return "retryable";
    case RunStatus::fatal: return "fatal";
  }
  return "";
}

nlohmann::json outcome_to_json(const RunOutcome& o) {
  return {{"status", to_string(o.status)},
          {"reason", o.reason},
          {"detail", o.detail},
          {"produced_atoms", o.produced_atoms},
          {"log", o.log}};
}

namespace {

bool is_daq(const std::string& service) {
  return service == daq::kDaqServiceKind || service == daq::kDaqServiceName;
}

/// A require step that did not hold.
struct Unmet {
  std::string reason;
  std::string detail;
  bool fatal;
};

/// Error raised by a bus call, tagged with the callee.
struct ServiceFailure {
  std::string service;
  Error error;
};

RunOutcome make(RunStatus status, std::string reason, std::string detail) {
  RunOutcome o;
  o.status = status;
  o.reason = std::move(reason);
  o.detail = std::move(detail);
  return o;
}

RunOutcome classify_service(const ServiceFailure& f) {
  const auto code = f.error.code();
  if (code == Errc::timeout || code == Errc::unknown_service || code == Errc::unknown_destination) {
    if (is_daq(f.service)) return make(RunStatus::retryable, "daq_unreachable", f.error.what());
    return make(RunStatus::retryable, code == Errc::timeout ? "service_timeout" : "service_unavailable",
                f.error.what());
  }
  return classify_error(f.error);
}

const AtomPayload* lookup(const ScriptContext& ctx, const std::string& var) {
  const auto dot = var.find('.');
  auto it = ctx.vars.find(var.substr(0, dot));
  if (it == ctx.vars.end()) return nullptr;
  const AtomPayload* p = &it->second.data;
  auto rest = dot == std::string::npos ? std::string() : var.substr(dot + 1);
  while (!rest.empty() && p) {
    const auto next = rest.find('.');
    p = p->find(rest.substr(0, next));
    rest = next == std::string::npos ? std::string() : rest.substr(next + 1);
  }
  return p;
}

bool numeric(const AtomPayload& p) {
  if (!p.is_scalar()) return false;
  const auto t = scalar_type(p.scalar());
  return t == ScalarType::dbl || t == ScalarType::i32 || t == ScalarType::sgl;
}

bool payload_equals(const AtomPayload& a, const AtomPayload& b) {
  if (numeric(a) && numeric(b)) return a.as_double() == b.as_double();
  return a == b;
}

void check_require(const ScriptContext& ctx, const op::Require& r) {
  const auto* p = lookup(ctx, r.var);
  if (!p) throw Unmet{r.reason, r.var + " is not available", r.fatal};
  if (r.equals && !payload_equals(*p, payload_from_value(*r.equals))) {
    throw Unmet{r.reason, r.var + " != " + r.equals->dump(), r.fatal};
  }
  if (r.min || r.max) {
    if (!numeric(*p)) throw Unmet{r.reason, r.var + " is not numeric", r.fatal};
    const double v = p->as_double();
    if (r.min && v < *r.min) throw Unmet{r.reason, r.var + " below minimum", r.fatal};
    if (r.max && v > *r.max) throw Unmet{r.reason, r.var + " above maximum", r.fatal};
  }
}

/// Timed ops expanded to events relative to the segment start.
MachineTime segment_events(ScriptContext& ctx, const OpList& ops, MachineTime t, std::vector<TimelineEvent>& out) {
  for (const auto& o : ops) {
    if (const auto* d = std::get_if<op::Delay>(&o.v)) {
      t += d->duration;
    } else if (const auto* s = std::get_if<op::SetTtl>(&o.v)) {
      out.push_back({t + s->offset, Channel::ttl(s->ttl), rtio::TtlSet{s->level}});
    } else if (const auto* p = std::get_if<op::TtlPulse>(&o.v)) {
      out.push_back({t + p->offset, Channel::ttl(p->ttl), rtio::TtlSet{true}});
      out.push_back({t + p->offset + p->width, Channel::ttl(p->ttl), rtio::TtlSet{false}});
    } else if (const auto* v = std::get_if<op::SetVoltages>(&o.v)) {
      std::map<std::uint16_t, std::uint32_t> masks;
      for (const auto& pair : v->pairs) {
        const auto conv = hv_code(ctx, pair.hv, pair.volts);
        const auto card = static_cast<std::uint16_t>(pair.hv / 32);
        const auto local = static_cast<std::uint8_t>(pair.hv % 32);
        out.push_back({t + v->offset, Channel::fastino(card), rtio::DacWord{local, conv.code}});
        masks[card] |= 1u << local;
      }
      for (const auto& [card, mask] : masks) out.push_back({t + v->offset, Channel::fastino(card), rtio::DacUpdate{mask}});
    }
  }
  return t;
}

class Executor {
 public:
  Executor(ScriptContext& ctx, const Program& program, MachineTime start)
      : start_(start), ctx_(ctx), program_(program) {}

  void run(const OpList& ops) {
    for (const auto& o : ops) std::visit([&](const auto& step) { exec(step); }, o.v);
  }

 private:
  void schedule(const std::vector<TimelineEvent>& events) {
    ctx_.crate.schedule_all(events);
    for (const auto& e : events) ctx_.horizon = std::max(ctx_.horizon, e.at);
  }

  void exec(const op::WaitTrigger& w) {
    const auto t = ctx_.crate.gate_rising(w.ttl, w.window);
    if (!t) fail(Errc::trigger_timeout, "no " + w.trigger + " edge within " + std::to_string(w.window.seconds()) + " s");
    ctx_.cursor = *t;
    ctx_.note(w.trigger + " at " + std::to_string(t->mu()) + " mu");
  }
  void exec(const op::Delay& d) { ctx_.cursor += d.duration; }
  void exec(const op::SetTtl& s) {
    schedule({{ctx_.cursor + s.offset, Channel::ttl(s.ttl), rtio::TtlSet{s.level}}});
  }
  void exec(const op::TtlPulse& p) {
    const auto t = ctx_.cursor + p.offset;
    schedule({{t, Channel::ttl(p.ttl), rtio::TtlSet{true}}, {t + p.width, Channel::ttl(p.ttl), rtio::TtlSet{false}}});
  }
  void exec(const op::SetVoltages& v) { set_voltages(ctx_, ctx_.cursor + v.offset, v.pairs); }
  void exec(const op::SetVoltagesAtTrigger& v) {
    const auto t = set_voltages_at_trigger(ctx_, v.trigger, v.delay, v.pairs, v.window);
    ctx_.note(v.trigger + " at " + std::to_string(t.mu()) + " mu");
  }
  void exec(const op::CallService& c) {
    DataAtom reply;
    try {
      reply = call_service(ctx_, c.service, c.command, {c.command, timestamp_now(), c.payload});
    } catch (const Error& e) {
      throw ServiceFailure{c.service, e};
    }
    ctx_.note("called " + c.service + " " + c.command);
    if (!c.store_as.empty()) ctx_.vars[c.store_as] = std::move(reply);
  }
  void exec(const op::Emit& e) { emit_atom(ctx_, {e.name, timestamp_now(), e.value}); }
  void exec(const op::RecordTrace& r) {
    ctx_.crate.run_until(std::max(ctx_.horizon, ctx_.crate.now()));
    emit_atom(ctx_, rtio::trace_to_atom(trace_since(ctx_.crate.trace(), start_), r.name, timestamp_now()));
  }
  void exec(const op::Require& r) { check_require(ctx_, r); }
  void exec(const op::Repeat& r) {
    for (std::uint32_t i = 0; i < r.count; ++i) run(r.body);
  }
  void exec(const op::Segment& s) {
    std::vector<TimelineEvent> events;
    const auto length = segment_events(ctx_, s.body, MachineTime(0), events);
    const auto handle = ctx_.crate.dma_record(program_.script + "/" + s.name, std::move(events));
    ctx_.crate.dma_playback(handle, ctx_.cursor);
    ctx_.horizon = std::max(ctx_.horizon, ctx_.cursor + length);
    ctx_.cursor += length;
  }

  MachineTime start_;
  ScriptContext& ctx_;
  const Program& program_;
};

}  // namespace

RunOutcome classify_error(const Error& e, bool during_init) {
  switch (e.code()) {
    case Errc::trigger_timeout: return make(RunStatus::retryable, "trigger_timeout", e.what());
    case Errc::underflow: return make(RunStatus::fatal, "underflow", e.what());
    case Errc::timeout: return make(RunStatus::retryable, "service_timeout", e.what());
    case Errc::unknown_service:
      return make(during_init ? RunStatus::fatal : RunStatus::retryable,
                  during_init ? "unknown_service" : "service_unavailable", e.what());
    default: return make(RunStatus::fatal, std::string(to_string(e.code())), e.what());
  }
}

void emit_atom(ScriptContext& ctx, DataAtom atom) {
  ctx.produced.push_back(atom.name);
  if (!ctx.bridge || !ctx.bridge->has_service(daq::kDaqServiceKind)) return;
  try {
    ctx.bridge->call(daq::kDaqServiceKind, "write", std::move(atom));
  } catch (const Error& e) {
    throw ServiceFailure{daq::kDaqServiceKind, e};
  }
}

rtio::WaveformTrace trace_since(const rtio::WaveformTrace& trace, MachineTime from) {
  rtio::WaveformTrace out;
  for (const auto& [name, samples] : trace.channels) {
    auto it = std::lower_bound(samples.begin(), samples.end(), from,
                               [](const rtio::TraceSample& s, MachineTime t) { return s.at < t; });
    if (it != samples.end()) out.channels[name].assign(it, samples.end());
  }
  for (const auto& s : trace.sines) {
    if (s.at >= from) out.sines.push_back(s);
  }
  return out;
}

namespace {

RunOutcome execute(ScriptContext& ctx, const Program& program, MachineTime start, std::size_t log_from) {
  RunOutcome out;
  Executor ex(ctx, program, start);
  try {
    ex.run(program.ops);
    ctx.crate.run_until(std::max(ctx.horizon, ctx.crate.now()));
  } catch (const Unmet& u) {
    out = make(u.fatal ? RunStatus::fatal : RunStatus::retryable, u.reason, u.detail);
  } catch (const ServiceFailure& f) {
    out = classify_service(f);
  } catch (const Error& e) {
    out = classify_error(e);
  }
  if (!out.ok()) ctx.note(std::string(to_string(out.status)) + ": " + out.reason + " (" + out.detail + ")");
  out.produced_atoms = ctx.produced;
  out.log.assign(ctx.log.begin() + static_cast<std::ptrdiff_t>(log_from), ctx.log.end());
  out.trace = trace_since(ctx.crate.trace(), start);
  return out;
}

}  // namespace

RunOutcome run_program(ScriptContext& ctx, const Program& program) {
  ctx.produced.clear();
  return execute(ctx, program, ctx.cursor, ctx.log.size());
}

RunOutcome run_script(ScriptContext& ctx, const ExperimentScript& script, const ParamValues& params) {
  ctx.produced.clear();
  ctx.vars.clear();
  const auto log_from = ctx.log.size();
  const auto start = ctx.crate.earliest();
  Program program;
  try {
    program = build_and_init(ctx, script, params);
  } catch (const Error& e) {
    auto out = classify_error(e, true);
    out.log.assign(ctx.log.begin() + static_cast<std::ptrdiff_t>(log_from), ctx.log.end());
    out.log.push_back(timestamp_now().display + " fatal: " + out.reason + " (" + out.detail + ")");
    return out;
  }
  return execute(ctx, program, start, log_from);
}

}  // namespace circus::script
