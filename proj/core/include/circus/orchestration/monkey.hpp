#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circus/clock.hpp"
#include "circus/orchestration/schedule.hpp"
#include "circus/pipeline/optimizer.hpp"
#include "circus/script/engine.hpp"

namespace circus::orchestration {

struct Position {
  std::size_t entry = 0;
  std::size_t scan = 0;  // scan point or feedback step
  std::uint32_t repeat = 0;
  bool operator==(const Position&) const = default;
};

enum class Mode { running, paused, stopped, finished };
std::string_view to_string(Mode m) noexcept;

struct MonkeyState {
  Position position;
  Mode mode = Mode::running;
  /// Why the monkey is paused: a retryable reason code or "operator".
  std::string pause_reason;
  std::uint32_t retries_here = 0;
  std::uint64_t completed = 0;
  /// Feedback history of the current entry.
  std::vector<pipeline::HistoryEntry> history;
};

nlohmann::json state_to_json(const MonkeyState& s);
MonkeyState state_from_json(const nlohmann::json& j);

/// One experiment to run: which script, with which parameters.
struct PointRequest {
  Position position;
  std::string script;
  script::ParamValues params;
};

using ScriptRunner = std::function<script::RunOutcome(const PointRequest&)>;
/// Returns a reason code (e.g. "beam_empty") while the experiment cannot run.
using Precondition = std::function<std::optional<std::string>()>;
/// Latest value of an observable, used by feedback entries.
using ObservableSource = std::function<std::optional<double>(const std::string& name)>;

enum class Command { pause, resume, abort };

struct MonkeyEvent {
  enum class Type {
    entry_started,
    point_started,
    point_done,    // outcome success
    point_failed,  // outcome not success; a retry or a pause follows
    paused,
    resumed,
    poll,
    feedback,
    finished,
    stopped,
  };
  Type type;
  Clock::time_point at;
  MonkeyState state;
  std::optional<PointRequest> point;
  std::optional<script::RunOutcome> outcome;
};
std::string_view to_string(MonkeyEvent::Type t) noexcept;
nlohmann::json event_to_json(const MonkeyEvent& e, const std::string& crate);

struct MonkeyOptions {
  std::string crate = "crate0";
  std::uint32_t max_retries = 3;
  Duration poll_interval = std::chrono::seconds(10);
  /// Simulated time one experiment takes; zero leaves the clock alone.
  Duration point_duration{0};
  /// Persisted after every point when set.
  std::optional<std::filesystem::path> state_file;
  /// Consecutive failed precondition polls before PreconditionUnsatisfiable;
  /// unset polls forever.
  std::optional<std::uint64_t> max_polls;
  /// Called before the first point of every entry; returning false stops the
  /// monkey. The tamer's barrier hooks in here.
  std::function<bool(std::size_t entry, Clock& clock)> before_entry;
  /// Called when an entry has no points left.
  std::function<void(std::size_t entry, Clock& clock)> after_entry;
};

/// Executor for one crate. Runs entries in order, enumerates scan points,
/// retries retryable outcomes, pauses on exhausted retries or unmet
/// preconditions and resumes by polling. Commands are queued and applied
/// between points.
class Monkey {
 public:
  using Sink = std::function<void(const MonkeyEvent&)>;

  /// Resumes from `options.state_file` when it holds state for this schedule.
  Monkey(Schedule schedule, ScriptRunner runner, Clock& clock, MonkeyOptions options = {},
         Precondition precondition = {}, ObservableSource observables = {}, const ScriptLibrary* library = nullptr);

  void post(Command c);
  MonkeyState state() const;
  const Schedule& schedule() const { return schedule_; }
  const MonkeyOptions& options() const { return options_; }
  Clock& clock() { return clock_; }
  bool resumed_from_file() const { return resumed_from_file_; }
  void set_before_entry(std::function<bool(std::size_t, Clock&)> hook) { options_.before_entry = std::move(hook); }

  /// Performs one unit of work: a point attempt, or one poll while paused.
  /// Returns false once finished or stopped. Throws FatalScript (schedule
  /// stopped) and PreconditionUnsatisfiable.
  bool step(const Sink& sink = {});
  /// Steps until finished or stopped. While paused by the operator it blocks
  /// waiting for a command.
  MonkeyState run(const Sink& sink = {});

 private:
  void apply_commands(const Sink& sink);
  void emit(const Sink& sink, MonkeyEvent::Type type, std::optional<PointRequest> point = std::nullopt,
            std::optional<script::RunOutcome> outcome = std::nullopt);
  PointRequest current_point() const;
  void advance();
  void finish_entry();
  void persist() const;
  void set_mode(Mode m, std::string reason = {});

  Schedule schedule_;
  std::string hash_;
  ScriptRunner runner_;
  Clock& clock_;
  MonkeyOptions options_;
  Precondition precondition_;
  ObservableSource observables_;
  const ScriptLibrary* library_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Command> commands_;
  MonkeyState state_;
  bool entry_open_ = false;
  bool resumed_from_file_ = false;
  std::uint64_t failed_polls_ = 0;
};

}  // namespace circus::orchestration
