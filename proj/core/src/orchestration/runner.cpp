#include "circus/orchestration/runner.hpp"

#include "circus/error.hpp"
#include "circus/script/engine.hpp"

namespace circus::orchestration {

CrateRunner::CrateRunner(rtio::Crate& crate, const ScriptLibrary& library, script::ServiceBridge* bridge,
                         std::map<std::uint16_t, autotune::CalibrationRecord> calibration, CrateRunnerOptions options)
    : crate_(crate),
      library_(library),
      bridge_(bridge),
      calibration_(std::move(calibration)),
      options_(std::move(options)) {}

script::RunOutcome CrateRunner::operator()(const PointRequest& point) {
  auto it = library_.find(point.script);
  if (it == library_.end()) fail(Errc::fatal_script, "unknown script " + point.script);
  script::ScriptContext ctx(crate_, bridge_);
  ctx.calibration = calibration_;
  if (options_.inject_trigger) {
    const auto ttl = script::resolve_trigger_input(crate_.config(), *options_.inject_trigger);
    const auto t = crate_.earliest() + options_.trigger_lead;
    crate_.inject_edge(ttl, t, true);
    crate_.inject_edge(ttl, t + crate_.config().trigger_width, false);
  }
  last_ = script::run_script(ctx, it->second, point.params);
  return last_;
}

}  // namespace circus::orchestration
