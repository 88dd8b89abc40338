#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "circus/error.hpp"
#include "circus/rtio/trace.hpp"
#include "circus/script/context.hpp"
#include "circus/script/script.hpp"

namespace circus::script {

enum class RunStatus { success, retryable, fatal };
std::string_view to_string(RunStatus s) noexcept;

struct RunOutcome {
  RunStatus status = RunStatus::success;
  /// Machine-readable code for retryable and fatal outcomes, e.g.
  /// "trigger_timeout", "beam_empty", "daq_unreachable", "underflow".
  std::string reason;
  std::string detail;
  std::vector<std::string> produced_atoms;
  std::vector<std::string> log;
  /// Outputs executed by this run, on absolute machine time.
  rtio::WaveformTrace trace;

  bool ok() const { return status == RunStatus::success; }
};

nlohmann::json outcome_to_json(const RunOutcome& o);

/// Outcome a library error maps to when raised while running a script.
RunOutcome classify_error(const Error& e, bool during_init = false);

/// build_and_init followed by the step program; never throws for script
/// failures, which are reported in the outcome.
RunOutcome run_script(ScriptContext& ctx, const ExperimentScript& script, const ParamValues& params = {});
/// Executes an already initialized program.
RunOutcome run_program(ScriptContext& ctx, const Program& program);

/// Writes an atom to the DAQ when one is reachable and records its name.
void emit_atom(ScriptContext& ctx, DataAtom atom);

/// Samples executed at or after `from`.
rtio::WaveformTrace trace_since(const rtio::WaveformTrace& trace, rtio::MachineTime from);

}  // namespace circus::script
