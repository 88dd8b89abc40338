// circus-pipe: analysis pipeline and feedback optimizer.
//
//   circus-pipe promote [RUN...]             build/refresh gold records
//   circus-pipe dataset OBS... [--runs ..]   CSV + manifest of observables
//   circus-pipe last NAME                    latest value of an observable
//   circus-pipe propose SPEC [HISTORY]       next feedback parameter set

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "circus/daq/daq_manager.hpp"
#include "circus/error.hpp"
#include "circus/pipeline/optimizer.hpp"
#include "circus/pipeline/pipeline.hpp"

using namespace circus;
using nlohmann::json;

namespace {

json read_json(const std::string& p) {
  std::ifstream in(p);
  if (!in) fail(Errc::io_error, "cannot open " + p);
  return json::parse(in);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Promote runs, build datasets, propose feedback parameters"};
  app.require_subcommand(1);
  std::string root = daq::default_data_root().string();
  app.add_option("--data-root", root, "Data root holding runs/ (default $CIRCUS_DATA_ROOT or ./data)");

  std::vector<std::string> runs, observables;
  std::string csv = "dataset.csv", name, spec_path, history_path;

  auto* promote = app.add_subcommand("promote", "Promote runs to gold (all runs when none given)");
  promote->add_option("runs", runs);

  auto* dataset = app.add_subcommand("dataset", "Tabulate observables across runs");
  dataset->add_option("observables", observables, "detector.observable columns")->required();
  dataset->add_option("--runs", runs, "Run ids (default: all)");
  dataset->add_option("-o,--csv", csv, "CSV path; the manifest goes next to it");

  auto* last = app.add_subcommand("last", "Most recent value of detector.observable");
  last->add_option("name", name)->required();

  auto* propose = app.add_subcommand("propose", "Next parameters for a feedback spec");
  propose->add_option("spec", spec_path)->required()->check(CLI::ExistingFile);
  propose->add_option("history", history_path, "JSON array of {params, observable}")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*propose) {
      const auto spec = pipeline::feedback_from_json(read_json(spec_path));
      std::vector<pipeline::HistoryEntry> history;
      if (!history_path.empty()) {
        for (const auto& h : read_json(history_path)) {
          history.push_back({h.at("params").get<pipeline::ParamSet>(), h.at("observable").get<double>()});
        }
      }
      json out{{"params", pipeline::propose_parameters(spec, history)},
               {"converged", pipeline::converged(spec, history)}};
      if (const auto best = pipeline::best_entry(spec, history)) out["best"] = history[*best].params;
      std::cout << out.dump() << "\n";
      return 0;
    }

    pipeline::Pipeline p(root);
    if (*promote) {
      if (runs.empty()) runs = p.run_ids();
      for (const auto& id : runs) {
        const auto gold = p.promote(id);
        std::size_t n = 0;
        for (const auto& [det, acqs] : gold.observables) n += acqs.size();
        std::cout << id << ": " << n << " acquisitions, " << gold.ledger.size() << " parse failures\n";
      }
      const auto s = p.stats();
      std::cerr << "built bronze " << s.bronze_built << ", silver " << s.silver_built << ", gold " << s.gold_built
                << "; cached gold " << s.gold_cached << "\n";
    } else if (*dataset) {
      const auto d = p.build_dataset(observables, runs);
      pipeline::write_dataset_csv(d, csv);
      const auto manifest_path = std::filesystem::path(csv).replace_extension(".json");
      std::ofstream(manifest_path) << pipeline::dataset_manifest(d, csv).dump(2) << "\n";
      std::cout << d.rows.size() << " rows -> " << csv << ", " << manifest_path.string() << "\n";
    } else if (*last) {
      std::cout << encode_atom(p.last_observable(name)) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
