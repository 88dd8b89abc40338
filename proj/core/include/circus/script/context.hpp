#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "circus/actor/node.hpp"
#include "circus/atom.hpp"
#include "circus/autotune/calibration.hpp"
#include "circus/rtio/crate.hpp"
#include "circus/script/script.hpp"

namespace circus::script {

using Duration = std::chrono::steady_clock::duration;
inline constexpr Duration kServiceTimeout = std::chrono::seconds(2);

/// Synchronous request/reply to bus services, addressed by kind or name.
class ServiceBridge {
 public:
  virtual ~ServiceBridge() = default;
  virtual bool has_service(const std::string& service) const = 0;
  /// Throws UnknownService, Timeout, or the Error carried by an error reply.
  virtual DataAtom call(const std::string& service, const std::string& command, DataAtom payload,
                        Duration timeout = kServiceTimeout) = 0;
};

/// Talks to services through a Node; replies come back to `requester`.
class NodeBridge : public ServiceBridge {
 public:
  NodeBridge(actor::Node& node, std::string requester = "script");
  bool has_service(const std::string& service) const override;
  DataAtom call(const std::string& service, const std::string& command, DataAtom payload,
                Duration timeout = kServiceTimeout) override;

 private:
  std::optional<actor::Address> resolve(const std::string& service) const;
  actor::Node& node_;
  actor::Address requester_;
};

/// In-process services for tests and the stand-alone simulator.
class LoopbackBridge : public ServiceBridge {
 public:
  using Handler = std::function<DataAtom(const std::string& command, const DataAtom& payload)>;
  void add(std::string service, Handler handler);
  bool has_service(const std::string& service) const override;
  DataAtom call(const std::string& service, const std::string& command, DataAtom payload,
                Duration timeout = kServiceTimeout) override;

 private:
  std::map<std::string, Handler> handlers_;
};

/// Everything a script runs against: one crate, its calibration table and
/// the bus. The cursor is the timeline position timed steps are placed at.
struct ScriptContext {
  rtio::Crate& crate;
  ServiceBridge* bridge = nullptr;
  std::map<std::uint16_t, autotune::CalibrationRecord> calibration;

  rtio::MachineTime cursor;
  /// Latest timestamp scheduled so far.
  rtio::MachineTime horizon;
  std::map<std::string, DataAtom> vars;
  std::vector<std::string> log;
  std::vector<std::string> warnings;
  std::vector<std::string> produced;

  explicit ScriptContext(rtio::Crate& c, ServiceBridge* b = nullptr) : crate(c), bridge(b) {}

  void note(const std::string& line);
  void warn(const std::string& line);
};

/// Validates the script against the crate and the bus, then configures the
/// outputs: every hv channel's relay closed and its DAC set for 0 V.
/// Returns the compiled program. Throws ConfigMismatch or UnknownService.
Program build_and_init(ScriptContext& ctx, const ExperimentScript& script, const ParamValues& params = {});
/// The init half alone; schedules at crate.earliest() and runs to it.
void init_outputs(ScriptContext& ctx);

/// DAC code for `volts` at the amplifier output of `hv`, using the table or
/// the nominal gain (with a warning unless `quiet`).
rtio::DacConversion hv_code(ScriptContext& ctx, std::uint16_t hv, double volts, bool quiet = false);

/// Places all listed channels' updates at exactly `at`.
void set_voltages(ScriptContext& ctx, rtio::MachineTime at, const std::vector<VoltagePair>& pairs);

/// Waits for a rising edge on the trigger input, then steps every listed
/// channel at t_trigger + delay. Returns t_trigger. Throws TriggerTimeout;
/// Underflow propagates.
rtio::MachineTime set_voltages_at_trigger(ScriptContext& ctx, const std::string& trigger, rtio::MachineTime delay,
                                          const std::vector<VoltagePair>& pairs,
                                          rtio::MachineTime window = kDefaultTriggerWindow);

/// Bus request from a script; the timeline does not advance while waiting.
DataAtom call_service(ScriptContext& ctx, const std::string& service, const std::string& command, DataAtom payload,
                      Duration timeout = kServiceTimeout);

}  // namespace circus::script
