#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circus/atom.hpp"
#include "circus/pipeline/stages.hpp"

namespace circus::pipeline {

/// Numeric ids compare by value and sort before free-form ids.
bool run_id_less(const std::string& a, const std::string& b);

struct Dataset {
  struct Row {
    std::string run_id;
    std::optional<AtomTimestamp> started_at;
    std::vector<std::optional<double>> values;  // null when the run lacks the observable
  };
  /// "<detector>.<observable>"
  std::vector<std::string> columns;
  std::vector<Row> rows;
};

void write_dataset_csv(const Dataset& d, const std::filesystem::path& path);
nlohmann::json dataset_manifest(const Dataset& d, const std::filesystem::path& csv_path);

struct StageStats {
  std::size_t bronze_built = 0;
  std::size_t silver_built = 0;
  std::size_t gold_built = 0;
  std::size_t gold_cached = 0;
};

/// Stage a gold record is loaded from; everything downstream is recomputed.
enum class Source { raw, bronze, silver, gold };

/// Promotes runs under <data_root>/runs/ through the stages, caching every
/// stage in runs/<id>/_stages/. A stage is rebuilt when the content hash of
/// its input changes. Runs are locked individually so different runs can be
/// promoted concurrently.
class Pipeline {
 public:
  explicit Pipeline(std::filesystem::path data_root, GoldOptions options = {});

  const std::filesystem::path& data_root() const { return root_; }
  std::filesystem::path run_dir(const std::string& run_id) const;
  /// All runs with a directory, ordered by run_id_less.
  std::vector<std::string> run_ids() const;

  /// Gold record for a run, rebuilt only when needed. Throws MissingRun.
  GoldRecord promote(const std::string& run_id);
  /// Loads a cached stage and recomputes the rest, without touching the cache.
  /// Promotes first when nothing is cached.
  GoldRecord gold_from(const std::string& run_id, Source source);
  /// The combined parse-failure ledger of a promoted run.
  DataAtom ledger(const std::string& run_id);

  /// Throws UnknownObservable when no requested run has a column.
  Dataset build_dataset(const std::vector<std::string>& observables, std::vector<std::string> run_ids);
  /// Most recent value of "<detector>.<observable>" by run order. Throws NoData.
  DataAtom last_observable(const std::string& name);

  StageStats stats() const;

 private:
  std::mutex& run_lock(const std::string& run_id);

  std::filesystem::path root_;
  GoldOptions options_;
  std::string options_hash_;
  mutable std::mutex locks_mu_;
  std::map<std::string, std::unique_ptr<std::mutex>> locks_;
  std::atomic<std::size_t> bronze_built_{0}, silver_built_{0}, gold_built_{0}, gold_cached_{0};
};

/// Splits "<detector>.<observable>" at the last dot.
std::pair<std::string, std::string> split_column(const std::string& column);
/// Value of a column from the latest acquisition that has it.
std::optional<std::pair<double, AtomTimestamp>> column_value(const GoldRecord& gold, const std::string& column);

}  // namespace circus::pipeline
