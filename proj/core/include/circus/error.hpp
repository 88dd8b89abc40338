#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace circus {

enum class Errc {
  invalid_argument,
  io_error,
  // atom codec
  malformed_document,
  schema_violation,
  // actor runtime
  duplicate_name,
  unknown_destination,
  timeout,
  resource_exhausted,
  unknown_id,
  // rtio
  underflow,
  direction_error,
  unknown_trigger,
  rate_exceeded,
  // scripts
  config_mismatch,
  trigger_timeout,
  unknown_service,
  // orchestration
  fatal_script,
  precondition_unsatisfiable,
  optimizer_exhausted,
  invalid_command,
  unauthorized,
  // daq
  duplicate_run,
  type_changed,
  run_closed,
  // pipeline
  missing_run,
  unknown_observable,
  no_data,
  // autotune
  no_pulse,
  degenerate_scan,
  invalid_calibration,
  verification_failed,
};

std::string_view to_string(Errc code) noexcept;
/// Inverse of to_string; nullopt for unknown names.
std::optional<Errc> errc_from_string(std::string_view name) noexcept;

/// The single exception type raised across the library; `code()` carries the
/// contract-level failure kind so callers can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }
  /// The text without the code prefix that what() carries.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

}  // namespace circus
