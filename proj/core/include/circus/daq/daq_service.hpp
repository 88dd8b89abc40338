#pragma once

#include <memory>
#include <string>

#include "circus/actor/node.hpp"
#include "circus/daq/daq_manager.hpp"

namespace circus::daq {

inline constexpr const char* kDaqServiceName = "DAQ Manager";
inline constexpr const char* kDaqServiceKind = "daq";

/// Bus front-end of a DaqManager. Commands (envelope kinds):
///   run_start  payload Str run id (may be empty)  -> "run_started" {run_id}
///   write      payload = the atom                 -> "stored" {path, run_id}
///   ingest     payload = the atom, queued, no reply
///   run_stop   payload Str run id (may be empty)  -> "run_stopped" summary
/// write/ingest go to the most recently started open run.
actor::Handler make_daq_handler(std::shared_ptr<DaqManager> daq);

actor::Address spawn_daq_service(actor::Node& node, std::shared_ptr<DaqManager> daq,
                                 const std::string& service_name = kDaqServiceName);

AtomPayload summary_to_payload(const RunSummary& s);
RunSummary summary_from_payload(const AtomPayload& p);

}  // namespace circus::daq
