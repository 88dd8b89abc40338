// circus-sim: run a schedule against a simulated crate and print the monkey
// events as NDJSON.

#include <filesystem>
#include <functional>
#include <map>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "circus/autotune/calibration.hpp"
#include "circus/clock.hpp"
#include "circus/error.hpp"
#include "circus/orchestration/gateway.hpp"
#include "circus/orchestration/monkey.hpp"
#include "circus/orchestration/runner.hpp"
#include "circus/orchestration/schedule.hpp"
#include "circus/rtio/config.hpp"

using namespace circus;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) fail(Errc::io_error, "cannot open " + p.string());
  return json::parse(in);
}

/// Every *.json under `dir` is a script, keyed by its "name".
orchestration::ScriptLibrary load_library(const fs::path& dir) {
  orchestration::ScriptLibrary lib;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json") continue;
    auto s = script::script_from_json(read_json(e.path()));
    lib[s.name] = std::move(s);
  }
  return lib;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Run a schedule on a simulated crate"};
  std::string schedule_path, scripts_dir, config_path, state_file, cal_dir, crate_name = "crate0";
  double point_ms = 0.0;
  int gateway_port = -1;
  bool realtime = false;
  std::uint64_t seed = 0;
  app.add_option("schedule", schedule_path, "Schedule JSON")->required()->check(CLI::ExistingFile);
  app.add_option("--scripts", scripts_dir, "Directory of script JSON files")->required()->check(CLI::ExistingDirectory);
  app.add_option("--crate-config", config_path, "Crate configuration JSON (default: built-in layout)");
  app.add_option("--seed", seed, "Crate seed when no configuration is given");
  app.add_option("--calibration", cal_dir, "Directory of calibration records (hvN.json)");
  app.add_option("--state-file", state_file, "Persist and resume monkey state here");
  app.add_option("--point-ms", point_ms, "Simulated duration of one point");
  app.add_option("--crate", crate_name, "Crate name in events");
  app.add_option("--gateway-port", gateway_port, "Serve the console gateway while running");
  app.add_flag("--realtime", realtime, "Use the wall clock instead of simulated time");
  CLI11_PARSE(app, argc, argv);

  try {
    rtio::CrateConfig cfg;
    if (!config_path.empty()) {
      cfg = rtio::load_config(config_path);
    } else {
      cfg.seed = seed;
    }
    rtio::Crate crate(cfg);
    const auto lib = load_library(scripts_dir);
    const auto schedule = orchestration::schedule_from_json(read_json(schedule_path));
    orchestration::validate_schedule(schedule, lib);

    std::map<std::uint16_t, autotune::CalibrationRecord> cal;
    if (!cal_dir.empty()) {
      for (const auto& e : fs::directory_iterator(cal_dir)) {
        if (e.path().extension() != ".json") continue;
        const auto rec = autotune::record_from_json(read_json(e.path()));
        cal[rec.channel] = rec;
      }
    }
    orchestration::CrateRunner runner(crate, lib, nullptr, cal);

    SimClock sim;
    SystemClock wall;
    Clock& clock = realtime ? static_cast<Clock&>(wall) : static_cast<Clock&>(sim);
    orchestration::MonkeyOptions o;
    o.crate = crate_name;
    o.point_duration = std::chrono::duration_cast<Duration>(std::chrono::duration<double, std::milli>(point_ms));
    if (!state_file.empty()) o.state_file = state_file;
    orchestration::Monkey monkey(schedule, std::ref(runner), clock, o, {}, {}, &lib);

    std::unique_ptr<orchestration::Gateway> gateway;
    if (gateway_port >= 0) {
      orchestration::GatewayOptions g;
      g.port = static_cast<std::uint16_t>(gateway_port);
      gateway = std::make_unique<orchestration::Gateway>(g);
      gateway->add_monkey(crate_name, &monkey);
      gateway->set_library(lib);
      std::cerr << "gateway on " << gateway->start() << std::endl;
    }
    auto gateway_sink = gateway ? gateway->monkey_sink(crate_name) : orchestration::Monkey::Sink{};
    const auto final_state = monkey.run([&](const orchestration::MonkeyEvent& e) {
      std::cout << orchestration::event_to_json(e, crate_name).dump() << "\n";
      if (gateway_sink) gateway_sink(e);
    });
    std::cout.flush();
    if (gateway) gateway->stop();
    std::cerr << "done: " << orchestration::to_string(final_state.mode) << ", " << final_state.completed
              << " points" << std::endl;
    return final_state.mode == orchestration::Mode::finished ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
