// circus-cal: amplifier calibration against the simulated board.
//
//   circus-cal scan   --channel N [--seed S] -o scan.json
//   circus-cal fit    scan.json -o hvN.json
//   circus-cal apply  hvN.json --volts V
//   circus-cal verify hvN.json --channel N [--seed S] [-o report.json]
//
// The board is rebuilt from the seed each time, so scan and verify with the
// same seed talk to the same hardware.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "circus/autotune/calibration.hpp"
#include "circus/error.hpp"

using namespace circus;
using nlohmann::json;

namespace {

json read_json(const std::string& p) {
  std::ifstream in(p);
  if (!in) fail(Errc::io_error, "cannot open " + p);
  return json::parse(in);
}

void emit(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(out);
  if (!f) fail(Errc::io_error, "cannot write " + out);
  f << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibrate high-voltage amplifier channels"};
  app.require_subcommand(1);
  std::uint64_t seed = 2024;
  double noise = 1e-3;
  std::uint16_t channel = 0;
  std::string in, out;
  double volts = 0.0;

  auto* scan = app.add_subcommand("scan", "Step the DAC and record the multimeter");
  scan->add_option("--channel", channel)->required();
  scan->add_option("--seed", seed, "Simulated board seed");
  scan->add_option("--noise", noise, "Readout noise RMS (V)");
  scan->add_option("-o,--out", out);

  auto* fit = app.add_subcommand("fit", "Least-squares fit of a scan");
  fit->add_option("scan", in)->required()->check(CLI::ExistingFile);
  fit->add_option("-o,--out", out);

  auto* apply = app.add_subcommand("apply", "DAC code for a desired output voltage");
  apply->add_option("record", in)->required()->check(CLI::ExistingFile);
  apply->add_option("--volts", volts)->required();

  auto* verify = app.add_subcommand("verify", "Check a record against the board");
  verify->add_option("record", in)->required()->check(CLI::ExistingFile);
  verify->add_option("--channel", channel)->required();
  verify->add_option("--seed", seed, "Simulated board seed");
  verify->add_option("--noise", noise, "Readout noise RMS (V)");
  verify->add_option("-o,--out", out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*scan) {
      rtio::Crate crate(autotune::perturbed_board(seed, noise));
      emit(autotune::scan_to_json(autotune::calibration_scan(crate, channel)), out);
    } else if (*fit) {
      const auto rec = autotune::fit_calibration(autotune::scan_from_json(read_json(in)));
      emit(autotune::record_to_json(rec), out);
    } else if (*apply) {
      const auto conv = autotune::apply_calibration(autotune::record_from_json(read_json(in)), volts);
      std::cout << json{{"code", conv.code}, {"clamped", conv.clamped}}.dump() << "\n";
    } else if (*verify) {
      rtio::Crate crate(autotune::perturbed_board(seed, noise));
      auto rec = autotune::record_from_json(read_json(in));
      const auto report = autotune::verify_calibration(crate, channel, rec);
      emit(autotune::report_to_json(report), out);
      std::cerr << (report.passed ? "passed" : "FAILED") << ": max |diff| " << report.max_abs_diff * 1e3
                << " mV, extremes " << (report.extremes_ok() ? "ok" : "out of reach") << "\n";
      return report.passed ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
