#include "circus/daq/daq_service.hpp"

#include <mutex>

#include "circus/error.hpp"

namespace circus::daq {

using actor::Envelope;
using actor::ServiceContext;

AtomPayload summary_to_payload(const RunSummary& s) {
  return make_cluster({{"run_id", make_scalar(s.run_id)},
                       {"atom_count", make_scalar(static_cast<double>(s.atom_count))},
                       {"names", make_array(s.names)},
                       {"duration_s", make_scalar(s.duration_s)}});
}

RunSummary summary_from_payload(const AtomPayload& p) {
  RunSummary s;
  const auto* id = p.find("run_id");
  const auto* count = p.find("atom_count");
  const auto* names = p.find("names");
  const auto* dur = p.find("duration_s");
  if (!id || !count || !names || !dur || !names->is_array()) fail(Errc::schema_violation, "run summary payload");
  s.run_id = id->as_string();
  s.atom_count = static_cast<std::uint64_t>(count->as_double());
  if (const auto* v = std::get_if<std::vector<std::string>>(&names->array().values)) s.names = *v;
  s.duration_s = dur->as_double();
  return s;
}

namespace {

std::string run_id_of(const Envelope& env) {
  const auto& d = env.payload.data;
  if (d.is_scalar() && std::holds_alternative<std::string>(d.scalar())) return d.as_string();
  if (const auto* f = d.find("run_id")) return f->as_string();
  return {};
}

}  // namespace

actor::Handler make_daq_handler(std::shared_ptr<DaqManager> daq) {
  struct State {
    std::mutex mu;
    std::string current;
  };
  auto state = std::make_shared<State>();
  auto current = [state] {
    std::lock_guard lk(state->mu);
    if (state->current.empty()) fail(Errc::run_closed, "no run is open");
    return state->current;
  };

  return [daq, state, current](ServiceContext& ctx, const Envelope& env) {
    if (env.kind == "run_start") {
      const auto handle = daq->run_start(run_id_of(env));
      {
        std::lock_guard lk(state->mu);
        state->current = handle.run_id;
      }
      ctx.reply(env, "run_started",
                actor::make_payload("run_started", make_cluster({{"run_id", make_scalar(handle.run_id)}})));
    } else if (env.kind == "write") {
      const auto run = current();
      const auto path = daq->write_atom(run, env.payload);
      ctx.reply(env, "stored",
                actor::make_payload("stored", make_cluster({{"path", make_scalar(path.string())},
                                                            {"run_id", make_scalar(run)}})));
    } else if (env.kind == "ingest") {
      daq->submit(current(), env.payload);
    } else if (env.kind == "run_stop") {
      auto run = run_id_of(env);
      if (run.empty()) run = current();
      const auto summary = daq->run_stop(run);
      {
        std::lock_guard lk(state->mu);
        if (state->current == run) state->current.clear();
      }
      ctx.reply(env, "run_stopped", actor::make_payload("run_stopped", summary_to_payload(summary)));
    } else {
      fail(Errc::invalid_argument, "DAQ Manager does not understand " + env.kind);
    }
  };
}

actor::Address spawn_daq_service(actor::Node& node, std::shared_ptr<DaqManager> daq,
                                 const std::string& service_name) {
  actor::ServiceDescriptor desc;
  desc.service_name = service_name;
  desc.kind = kDaqServiceKind;
  return node.spawn_service(desc, make_daq_handler(std::move(daq)));
}

}  // namespace circus::daq
