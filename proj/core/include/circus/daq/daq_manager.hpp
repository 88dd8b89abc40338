#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "circus/atom.hpp"

namespace circus::daq {

enum class RunState { open, closing, closed };
std::string_view to_string(RunState s) noexcept;

struct RunHandle {
  std::string run_id;
  AtomTimestamp started_at;
  RunState state = RunState::open;
  std::uint64_t atom_count = 0;
};

struct RunSummary {
  std::string run_id;
  std::uint64_t atom_count = 0;
  std::vector<std::string> names;  // sorted
  double duration_s = 0.0;
};

struct ManifestEntry {
  std::string name;
  std::string file_name;  // filesystem-safe stem
  std::uint64_t count = 0;
  std::string type_tag;
};

struct Manifest {
  std::string run_id;
  AtomTimestamp started_at;
  std::optional<AtomTimestamp> stopped_at;
  std::vector<ManifestEntry> atoms;
};

nlohmann::json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
Manifest read_manifest(const std::filesystem::path& run_dir);

/// '/' separators become '.'.
std::string sanitize_name(std::string_view atom_name);
/// "<stem>__<seq, at least 6 digits>.json"
std::string atom_file_name(std::string_view atom_name, std::uint64_t seq);

/// Storage root from CIRCUS_DATA_ROOT, else "./data".
std::filesystem::path default_data_root();
std::filesystem::path runs_dir(const std::filesystem::path& root);

/// Writes `bytes` to a temporary sibling, syncs it and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes, bool sync = true);

struct DaqOptions {
  std::size_t queue_limit = 10'000;
  bool sync = true;
  /// Called with (code, text) when an atom is refused asynchronously.
  std::function<void(const std::string&, const std::string&)> on_error;
};

/// Run-scoped ingestion of data atoms into runs/<run_id>/.
///
/// write_atom is synchronous and durable on return. submit hands an atom to
/// the run's writer thread through a bounded queue.
class DaqManager {
 public:
  explicit DaqManager(std::filesystem::path root, DaqOptions options = {});
  ~DaqManager();
  DaqManager(const DaqManager&) = delete;
  DaqManager& operator=(const DaqManager&) = delete;

  const std::filesystem::path& root() const { return root_; }

  /// Empty id picks the next zero-padded 6-digit number. Throws DuplicateRun.
  RunHandle run_start(const std::string& run_id = {});
  /// Throws RunClosed, TypeChanged, SchemaViolation, MissingRun.
  std::filesystem::path write_atom(const std::string& run_id, const DataAtom& atom);
  /// Throws ResourceExhausted when the queue is full, RunClosed after stop.
  void submit(const std::string& run_id, DataAtom atom);
  /// Drains the queue, finalizes the manifest, closes the run.
  RunSummary run_stop(const std::string& run_id);

  RunHandle handle(const std::string& run_id) const;
  std::vector<std::string> open_runs() const;
  /// Last write failure seen by a writer thread, if any.
  std::optional<std::string> last_async_error() const;

 private:
  struct Run;
  std::shared_ptr<Run> find(const std::string& run_id) const;
  std::string next_run_id() const;
  void writer_loop(const std::shared_ptr<Run>& run);
  std::filesystem::path store(Run& run, const DataAtom& atom);
  void write_manifest(const Run& run);

  std::filesystem::path root_;
  DaqOptions options_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Run>> runs_;
  mutable std::mutex err_mu_;
  std::optional<std::string> last_error_;
};

}  // namespace circus::daq
