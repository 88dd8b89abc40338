#include "circus/error.hpp"

namespace circus {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::io_error: return "IoError";
    case Errc::malformed_document: return "MalformedDocument";
    case Errc::schema_violation: return "SchemaViolation";
    case Errc::duplicate_name: return "DuplicateName";
    case Errc::unknown_destination: return "UnknownDestination";
    case Errc::timeout: return "Timeout";
    case Errc::resource_exhausted: return "ResourceExhausted";
    case Errc::unknown_id: return "UnknownId";
    case Errc::underflow: return "Underflow";
    case Errc::direction_error: return "DirectionError";
    case Errc::unknown_trigger: return "UnknownTrigger";
    case Errc::rate_exceeded: return "RateExceeded";
    case Errc::config_mismatch: return "ConfigMismatch";
    case Errc::trigger_timeout: return "TriggerTimeout";
    case Errc::unknown_service: return "UnknownService";
    case Errc::fatal_script: return "FatalScript";
    case Errc::precondition_unsatisfiable: return "PreconditionUnsatisfiable";
    case Errc::optimizer_exhausted: return "OptimizerExhausted";
    case Errc::invalid_command: return "InvalidCommand";
    case Errc::unauthorized: return "Unauthorized";
    case Errc::duplicate_run: return "DuplicateRun";
    case Errc::type_changed: return "TypeChanged";
    case Errc::run_closed: return "RunClosed";
    case Errc::missing_run: return "MissingRun";
    case Errc::unknown_observable: return "UnknownObservable";
    case Errc::no_data: return "NoData";
    case Errc::no_pulse: return "NoPulse";
    case Errc::degenerate_scan: return "DegenerateScan";
    case Errc::invalid_calibration: return "InvalidCalibration";
    case Errc::verification_failed: return "VerificationFailed";
  }
  return "Unknown";
}

std::optional<Errc> errc_from_string(std::string_view name) noexcept {
  for (int i = 0; i <= static_cast<int>(Errc::verification_failed); ++i) {
    const auto c = static_cast<Errc>(i);
    if (to_string(c) == name) return c;
  }
  return std::nullopt;
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace circus
