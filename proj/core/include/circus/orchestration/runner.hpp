#pragma once

#include <map>
#include <optional>
#include <string>

#include "circus/orchestration/monkey.hpp"
#include "circus/rtio/crate.hpp"
#include "circus/script/context.hpp"

namespace circus::orchestration {

struct CrateRunnerOptions {
  /// Simulated trigger injected before every point so scripts waiting on it
  /// proceed; unset leaves triggers to the caller.
  std::optional<std::string> inject_trigger = "Trigger";
  rtio::MachineTime trigger_lead = rtio::MachineTime::us(100);
};

/// Runs schedule points as scripts on one crate.
class CrateRunner {
 public:
  CrateRunner(rtio::Crate& crate, const ScriptLibrary& library, script::ServiceBridge* bridge = nullptr,
              std::map<std::uint16_t, autotune::CalibrationRecord> calibration = {},
              CrateRunnerOptions options = {});

  script::RunOutcome operator()(const PointRequest& point);
  const script::RunOutcome& last() const { return last_; }

 private:
  rtio::Crate& crate_;
  const ScriptLibrary& library_;
  script::ServiceBridge* bridge_;
  std::map<std::uint16_t, autotune::CalibrationRecord> calibration_;
  CrateRunnerOptions options_;
  script::RunOutcome last_;
};

}  // namespace circus::orchestration
