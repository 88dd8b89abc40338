#include "circus/orchestration/monkey.hpp"

#include <fstream>
#include <sstream>

#include "circus/daq/daq_manager.hpp"
#include "circus/error.hpp"

namespace circus::orchestration {

using nlohmann::json;

std::string_view to_string(Mode m) noexcept {
  switch (m) {
    case Mode::running: return "running";
    case Mode::paused: return "paused";
    case Mode::stopped: return "stopped";
    case Mode::finished: return "finished";
  }
  return "";
}

std::string_view to_string(MonkeyEvent::Type t) noexcept {
  using T = MonkeyEvent::Type;
  switch (t) {
    case T::entry_started: return "entry_started";
    case T::point_started: return "point_started";
    case T::point_done: return "point_done";
    case T::point_failed: return "point_failed";
    case T::paused: return "paused";
    case T::resumed: return "resumed";
    case T::poll: return "poll";
    case T::feedback: return "feedback";
    case T::finished: return "finished";
    case T::stopped: return "stopped";
  }
  return "";
}

namespace {

Mode mode_from(const std::string& s) {
  for (auto m : {Mode::running, Mode::paused, Mode::stopped, Mode::finished}) {
    if (to_string(m) == s) return m;
  }
  fail(Errc::schema_violation, "unknown monkey mode " + s);
}

json params_json(const script::ParamValues& p) {
  json out = json::object();
  for (const auto& [k, v] : p) out[k] = v;
  return out;
}

double nanos(Clock::time_point t) { return static_cast<double>(t.time_since_epoch().count()); }

}  // namespace

json state_to_json(const MonkeyState& s) {
  json history = json::array();
  for (const auto& h : s.history) history.push_back({{"params", h.params}, {"observable", h.observable}});
  return {{"position", {{"entry", s.position.entry}, {"scan", s.position.scan}, {"repeat", s.position.repeat}}},
          {"mode", to_string(s.mode)},
          {"pause_reason", s.pause_reason},
          {"retries_here", s.retries_here},
          {"completed", s.completed},
          {"history", history}};
}

MonkeyState state_from_json(const json& j) {
  try {
    MonkeyState s;
    const auto& p = j.at("position");
    s.position = {p.at("entry").get<std::size_t>(), p.at("scan").get<std::size_t>(),
                  p.at("repeat").get<std::uint32_t>()};
    s.mode = mode_from(j.at("mode").get<std::string>());
    s.pause_reason = j.at("pause_reason").get<std::string>();
    s.retries_here = j.at("retries_here").get<std::uint32_t>();
    s.completed = j.at("completed").get<std::uint64_t>();
    for (const auto& h : j.at("history")) {
      s.history.push_back({h.at("params").get<pipeline::ParamSet>(), h.at("observable").get<double>()});
    }
    return s;
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("monkey state: ") + e.what());
  }
}

json event_to_json(const MonkeyEvent& e, const std::string& crate) {
  json j{{"type", to_string(e.type)}, {"crate", crate}, {"at_ns", nanos(e.at)}, {"state", state_to_json(e.state)}};
  if (e.point) j["point"] = {{"script", e.point->script}, {"params", params_json(e.point->params)}};
  if (e.outcome) j["outcome"] = script::outcome_to_json(*e.outcome);
  return j;
}

Monkey::Monkey(Schedule schedule, ScriptRunner runner, Clock& clock, MonkeyOptions options, Precondition precondition,
               ObservableSource observables, const ScriptLibrary* library)
    : schedule_(std::move(schedule)),
      hash_(schedule_hash(schedule_)),
      runner_(std::move(runner)),
      clock_(clock),
      options_(std::move(options)),
      precondition_(std::move(precondition)),
      observables_(std::move(observables)),
      library_(library) {
  if (schedule_.entries.empty()) fail(Errc::invalid_argument, "schedule has no entries");
  if (library_) validate_schedule(schedule_, *library_);
  if (options_.state_file && std::filesystem::exists(*options_.state_file)) {
    std::ifstream in(*options_.state_file);
    const auto doc = json::parse(in, nullptr, false);
    if (doc.is_object() && doc.value("schedule_hash", "") == hash_) {
      state_ = state_from_json(doc.at("state"));
      resumed_from_file_ = true;
    }
  }
}

void Monkey::post(Command c) {
  {
    std::lock_guard lk(mu_);
    commands_.push_back(c);
  }
  cv_.notify_all();
}

MonkeyState Monkey::state() const {
  std::lock_guard lk(mu_);
  return state_;
}

void Monkey::emit(const Sink& sink, MonkeyEvent::Type type, std::optional<PointRequest> point,
                  std::optional<script::RunOutcome> outcome) {
  if (!sink) return;
  sink(MonkeyEvent{type, clock_.now(), state(), std::move(point), std::move(outcome)});
}

void Monkey::set_mode(Mode m, std::string reason) {
  std::lock_guard lk(mu_);
  state_.mode = m;
  state_.pause_reason = m == Mode::paused ? std::move(reason) : std::string();
}

void Monkey::persist() const {
  if (!options_.state_file) return;
  const json doc{{"version", 1}, {"schedule_hash", hash_}, {"crate", options_.crate}, {"state", state_to_json(state())}};
  daq::write_file_atomic(*options_.state_file, doc.dump(), true);
}

void Monkey::apply_commands(const Sink& sink) {
  for (;;) {
    Command c;
    {
      std::lock_guard lk(mu_);
      if (commands_.empty()) return;
      c = commands_.front();
      commands_.pop_front();
    }
    const auto mode = state().mode;
    if (mode == Mode::stopped || mode == Mode::finished) continue;
    switch (c) {
      case Command::pause:
        set_mode(Mode::paused, "operator");
        emit(sink, MonkeyEvent::Type::paused);
        break;
      case Command::resume:
        if (mode != Mode::paused) break;
        {
          std::lock_guard lk(mu_);
          state_.retries_here = 0;
        }
        failed_polls_ = 0;
        set_mode(Mode::running);
        emit(sink, MonkeyEvent::Type::resumed);
        break;
      case Command::abort:
        set_mode(Mode::stopped);
        emit(sink, MonkeyEvent::Type::stopped);
        break;
    }
    persist();
  }
}

PointRequest Monkey::current_point() const {
  const auto s = state();
  const auto& entry = schedule_.entries.at(s.position.entry);
  PointRequest p{s.position, entry.script, entry.params};
  if (entry.scan) {
    for (auto& [k, v] : entry.scan->point(s.position.scan)) p.params[k] = v;
  } else if (entry.feedback) {
    for (const auto& [k, v] : pipeline::propose_parameters(*entry.feedback, s.history)) p.params[k] = v;
  }
  return p;
}

void Monkey::finish_entry() {
  const auto entry = state().position.entry;
  if (options_.after_entry) options_.after_entry(entry, clock_);
  std::lock_guard lk(mu_);
  state_.position = {entry + 1, 0, 0};
  state_.history.clear();
  state_.retries_here = 0;
  entry_open_ = false;
}

void Monkey::advance() {
  bool entry_done = false;
  {
    std::lock_guard lk(mu_);
    auto& pos = state_.position;
    const auto& entry = schedule_.entries[pos.entry];
    state_.retries_here = 0;
    if (++pos.repeat >= entry.repeat) {
      pos.repeat = 0;
      entry_done = ++pos.scan >= entry.points();
    }
  }
  if (entry_done) finish_entry();
}

bool Monkey::step(const Sink& sink) {
  using T = MonkeyEvent::Type;
  apply_commands(sink);
  auto s = state();
  if (s.mode == Mode::stopped || s.mode == Mode::finished) return false;

  if (s.mode == Mode::paused) {
    if (s.pause_reason == "operator") return true;
    clock_.sleep_for(options_.poll_interval);
    emit(sink, T::poll);
    const auto reason = precondition_ ? precondition_() : std::nullopt;
    if (reason) {
      ++failed_polls_;
      if (options_.max_polls && failed_polls_ >= *options_.max_polls) {
        persist();
        fail(Errc::precondition_unsatisfiable,
             *reason + " persisted for " + std::to_string(failed_polls_) + " polls; operator intervention required");
      }
      return true;
    }
    failed_polls_ = 0;
    {
      std::lock_guard lk(mu_);
      state_.retries_here = 0;
    }
    set_mode(Mode::running);
    emit(sink, T::resumed);
    persist();
    return true;
  }

  if (s.position.entry >= schedule_.entries.size()) {
    set_mode(Mode::finished);
    persist();
    emit(sink, T::finished);
    return false;
  }
  const auto& entry = schedule_.entries[s.position.entry];

  if (!entry_open_) {
    if (options_.before_entry && !options_.before_entry(s.position.entry, clock_)) {
      set_mode(Mode::stopped);
      persist();
      emit(sink, T::stopped);
      return false;
    }
    entry_open_ = true;
    emit(sink, T::entry_started);
  }

  if (precondition_) {
    if (auto reason = precondition_()) {
      set_mode(Mode::paused, *reason);
      persist();
      emit(sink, T::paused);
      return true;
    }
  }

  PointRequest point;
  if (entry.feedback) {
    if (pipeline::converged(*entry.feedback, s.history)) {
      finish_entry();
      persist();
      return true;
    }
    try {
      point = current_point();
    } catch (const Error& e) {
      if (e.code() != Errc::optimizer_exhausted) throw;
      finish_entry();
      persist();
      return true;
    }
  } else {
    point = current_point();
  }
  if (library_) {
    const auto& decls = library_->at(point.script).params;
    for (const auto& [k, v] : point.params) {
      auto d = decls.find(k);
      if (d == decls.end()) fail(Errc::fatal_script, point.script + " has no parameter " + k);
      script::check_param(d->second, v);
    }
  }

  emit(sink, T::point_started, point);
  script::RunOutcome outcome;
  try {
    outcome = runner_(point);
  } catch (const Error& e) {
    outcome = script::classify_error(e);
  }
  if (options_.point_duration.count() > 0) clock_.sleep_for(options_.point_duration);

  if (outcome.ok() && entry.feedback) {
    const auto obs = observables_ ? observables_(entry.feedback->observable) : std::nullopt;
    if (!obs) {
      outcome.status = script::RunStatus::retryable;
      outcome.reason = "no_observable";
      outcome.detail = entry.feedback->observable + " not available";
    } else {
      pipeline::ParamSet ps;
      for (const auto& fp : entry.feedback->params) ps[fp.name] = point.params.at(fp.name).get<double>();
      {
        std::lock_guard lk(mu_);
        state_.history.push_back({ps, *obs});
      }
      emit(sink, T::feedback, point, outcome);
    }
  }

  if (outcome.ok()) {
    {
      std::lock_guard lk(mu_);
      ++state_.completed;
    }
    emit(sink, T::point_done, point, outcome);
    advance();
    persist();
    return true;
  }

  if (outcome.status == script::RunStatus::fatal) {
    set_mode(Mode::stopped);
    persist();
    emit(sink, T::stopped, point, outcome);
    fail(Errc::fatal_script, point.script + ": " + outcome.reason + " (" + outcome.detail + ")");
  }

  std::uint32_t retries;
  {
    std::lock_guard lk(mu_);
    retries = ++state_.retries_here;
  }
  emit(sink, T::point_failed, point, outcome);
  if (retries > options_.max_retries) {
    set_mode(Mode::paused, outcome.reason);
    emit(sink, T::paused, point, outcome);
  }
  persist();
  return true;
}

MonkeyState Monkey::run(const Sink& sink) {
  for (;;) {
    {
      std::unique_lock lk(mu_);
      cv_.wait(lk, [&] {
        return !commands_.empty() || state_.mode != Mode::paused || state_.pause_reason != "operator";
      });
    }
    if (!step(sink)) break;
  }
  return state();
}

}  // namespace circus::orchestration
