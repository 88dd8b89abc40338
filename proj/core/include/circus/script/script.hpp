#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "circus/atom.hpp"
#include "circus/rtio/config.hpp"
#include "circus/rtio/types.hpp"
#include "circus/script/units.hpp"

namespace circus::script {

inline constexpr const char* kStepSet = "1";
/// One AD cycle.
inline constexpr rtio::MachineTime kDefaultTriggerWindow = rtio::MachineTime::s(120);

enum class ParamType { number, integer, string, boolean, quantity };

struct ParamDecl {
  std::string name;
  ParamType type = ParamType::number;
  Dimension dimension = Dimension::none;  // for quantities
  nlohmann::json default_value;
};

using ParamValues = std::map<std::string, nlohmann::json>;

/// Declarative experiment: typed parameters and a step program. Step fields
/// may reference parameters as "$name".
struct ExperimentScript {
  std::string name;
  std::map<std::string, ParamDecl> params;
  nlohmann::json steps = nlohmann::json::array();
};

/// Throws SchemaViolation naming the offending field path.
ExperimentScript script_from_json(const nlohmann::json& doc);
nlohmann::json script_to_json(const ExperimentScript& script);
ExperimentScript load_script(const std::filesystem::path& path);

/// Throws InvalidArgument when `value` does not fit the declaration.
void check_param(const ParamDecl& decl, const nlohmann::json& value);
/// Defaults overlaid with `overrides`; unknown names throw InvalidArgument.
ParamValues bind_params(const ExperimentScript& script, const ParamValues& overrides);

// ---- compiled program ------------------------------------------------------

struct VoltagePair {
  std::uint16_t hv = 0;
  double volts = 0.0;
};

namespace op {
struct WaitTrigger {
  std::string trigger;
  std::uint16_t ttl = 0;
  rtio::MachineTime window = kDefaultTriggerWindow;
};
struct Delay {
  rtio::MachineTime duration;
};
struct SetTtl {
  std::uint16_t ttl = 0;
  bool level = false;
  rtio::MachineTime offset;
};
struct TtlPulse {
  std::uint16_t ttl = 0;
  rtio::MachineTime width;
  rtio::MachineTime offset;
};
struct SetVoltages {
  std::vector<VoltagePair> pairs;
  rtio::MachineTime offset;
};
struct SetVoltagesAtTrigger {
  std::string trigger;
  std::uint16_t ttl = 0;
  rtio::MachineTime delay;
  std::vector<VoltagePair> pairs;
  rtio::MachineTime window = kDefaultTriggerWindow;
};
struct CallService {
  std::string service;
  std::string command;
  AtomPayload payload;
  std::string store_as;
};
struct Emit {
  std::string name;
  AtomPayload value;
};
struct RecordTrace {
  std::string name;
};
/// Fails the run unless a stored reply satisfies the condition.
struct Require {
  std::string var;    // "<store_as>" or "<store_as>.<field>"
  std::optional<nlohmann::json> equals;
  std::optional<double> min;
  std::optional<double> max;
  std::string reason;
  bool fatal = false;
};
}  // namespace op

struct Op;
using OpList = std::vector<Op>;

namespace op {
struct Repeat {
  std::uint32_t count = 1;
  OpList body;
};
/// Timed block recorded once as a DMA sequence and played back at the cursor.
struct Segment {
  std::string name;
  OpList body;
};
}  // namespace op

struct Op {
  std::variant<op::WaitTrigger, op::Delay, op::SetTtl, op::TtlPulse, op::SetVoltages, op::SetVoltagesAtTrigger,
               op::CallService, op::Emit, op::RecordTrace, op::Require, op::Repeat, op::Segment>
      v;
};

struct Program {
  std::string script;
  OpList ops;
};

/// Resolves parameters and units and checks every channel against the crate
/// configuration. Throws ConfigMismatch for unknown or misdirected channels,
/// InvalidArgument for malformed values.
Program compile(const ExperimentScript& script, const ParamValues& params, const rtio::CrateConfig& config);

/// Input line of a trigger given by TTL name ("Trigger") or cascade name
/// ("bunch_arrival"). Throws ConfigMismatch.
std::uint16_t resolve_trigger_input(const rtio::CrateConfig& config, const std::string& trigger);

/// Service names referenced anywhere in the program.
std::vector<std::string> referenced_services(const Program& program);
/// True when no op in the list waits on the bus or on an input.
bool timed_only(const OpList& ops);

/// Converts a JSON value into an atom payload (numbers, strings, booleans,
/// numeric or string arrays, objects as clusters).
AtomPayload payload_from_value(const nlohmann::json& value);

}  // namespace circus::script
