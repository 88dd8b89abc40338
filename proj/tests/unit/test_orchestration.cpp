#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

#include <httplib.h>

#include "circus/error.hpp"
#include "circus/orchestration/gateway.hpp"
#include "circus/orchestration/monkey.hpp"
#include "circus/orchestration/runner.hpp"
#include "circus/orchestration/schedule.hpp"
#include "circus/orchestration/tamer.hpp"
#include "support.hpp"

using namespace circus;
using namespace circus::orchestration;
using nlohmann::json;
using std::chrono::milliseconds;
using std::chrono::seconds;

namespace {

Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "no error raised";
  return Error(Errc::invalid_argument, "none");
}

Schedule parse(const char* text) { return schedule_from_json(json::parse(text)); }

script::RunOutcome success() { return {}; }
script::RunOutcome retryable(std::string reason) {
  script::RunOutcome o;
  o.status = script::RunStatus::retryable;
  o.reason = std::move(reason);
  return o;
}

/// Records every point the runner is handed.
struct Recorder {
  std::vector<PointRequest> points;
  std::function<script::RunOutcome(const PointRequest&)> outcome = [](const PointRequest&) { return success(); };
  ScriptRunner runner() {
    return [this](const PointRequest& p) {
      points.push_back(p);
      return outcome(p);
    };
  }
};

std::string message_of(const Error& e) { return e.message(); }

std::vector<MonkeyEvent::Type> types_of(const std::vector<MonkeyEvent>& events) {
  std::vector<MonkeyEvent::Type> out;
  for (const auto& e : events) out.push_back(e.type);
  return out;
}

}  // namespace

// ---- schedules -------------------------------------------------------------

TEST(Schedule, ParseErrorsStartWithTheFieldPath) {
  auto msg = [](const char* text) { return message_of(error_of([&] { parse(text); })); };
  EXPECT_EQ(msg(R"({"entries": [{"script": "s", "scan": {"dims": [{"param": "a", "values": [1]},
                                                                  {"param": "b", "values": []}]}}]})")
                .rfind("entries[0].scan.dims[1].values: must not be empty", 0),
            0u);
  EXPECT_EQ(msg(R"({"entries": []})").rfind("entries:", 0), 0u);
  EXPECT_EQ(msg(R"({"entries": [{"script": "s"}, {"params": {}}]})").rfind("entries[1].script", 0), 0u);
  EXPECT_EQ(msg(R"({"entries": [{"script": "s", "repeat": 0}]})").rfind("entries[0].repeat", 0), 0u);
  EXPECT_EQ(msg(R"({"entries": [{"script": "s", "feedback": {"observable": "a.b"}}]})").rfind("entries[0].feedback", 0),
            0u);
  EXPECT_EQ(error_of([] { parse(R"({"entries": 3})"); }).code(), Errc::schema_violation);
}

TEST(Schedule, RoundTripKeepsTheHash) {
  const auto s = parse(R"({"created_by": "op", "entries": [
      {"script": "ramp", "params": {"v": "10 V"}, "repeat": 2},
      {"script": "ramp", "scan": {"order": "lexicographic", "dims": [{"param": "v", "values": ["1 V", "2 V"]}]}},
      {"script": "tune", "feedback": {"observable": "mcp.sum", "objective": {"kind": "maximize"},
                                      "params": [{"name": "x", "lo": 0, "hi": 1}], "budget": 5}}]})");
  const auto back = schedule_from_json(schedule_to_json(s));
  EXPECT_EQ(schedule_to_json(back), schedule_to_json(s));
  EXPECT_EQ(schedule_hash(back), schedule_hash(s));
  EXPECT_EQ(s.entries[0].points(), 1u);
  EXPECT_EQ(s.entries[1].points(), 2u);
  EXPECT_EQ(s.entries[2].points(), 5u);

  auto changed = s;
  changed.entries[0].params["v"] = "11 V";
  EXPECT_NE(schedule_hash(changed), schedule_hash(s));
  changed = s;
  changed.created_by = "someone else";
  EXPECT_EQ(schedule_hash(changed), schedule_hash(s));
}

TEST(Schedule, SnakeOrderStepsOneDigitAtATime) {
  ScanSpec scan;
  scan.dims = {{"a", {1, 2, 3}}, {"b", {"x", "y"}}, {"c", {0.1, 0.2, 0.3, 0.4}}, {"d", {true, false}}};
  ASSERT_EQ(scan.size(), 48u);
  std::set<std::vector<std::size_t>> seen;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const auto d = scan.digits(i);
    seen.insert(d);
    if (i == 0) continue;
    const auto prev = scan.digits(i - 1);
    int changed = 0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (d[k] != prev[k]) {
        ++changed;
        EXPECT_EQ(std::max(d[k], prev[k]) - std::min(d[k], prev[k]), 1u);
      }
    }
    EXPECT_EQ(changed, 1) << i;
  }
  EXPECT_EQ(seen.size(), 48u);

  scan.order = ScanOrder::lexicographic;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const auto d = scan.digits(i);
    EXPECT_EQ(((d[0] * 2 + d[1]) * 4 + d[2]) * 2 + d[3], i);
  }
  EXPECT_EQ(scan.point(47).at("a"), 3);
  EXPECT_EQ(scan.point(47).at("d"), false);
}

TEST(Schedule, ValidatedAgainstTheLibrary) {
  ScriptLibrary lib;
  lib["ramp"] = script::script_from_json(json::parse(R"({"name": "ramp", "params": {"v": "1 V"}, "steps": []})"));
  validate_schedule(parse(R"({"entries": [{"script": "ramp", "params": {"v": "3 kV"}}]})"), lib);
  EXPECT_EQ(message_of(error_of([&] { validate_schedule(parse(R"({"entries": [{"script": "nope"}]})"), lib); }))
                .rfind("entries[0].script", 0),
            0u);
  const auto bad = error_of([&] {
    validate_schedule(parse(R"({"entries": [{"script": "ramp", "scan": {"dims": [{"param": "w", "values": [1]}]}}]})"),
                      lib);
  });
  EXPECT_EQ(bad.code(), Errc::schema_violation);
  EXPECT_EQ(error_of([&] {
              validate_schedule(parse(R"({"entries": [{"script": "ramp", "params": {"v": "3 ms"}}]})"), lib);
            }).code(),
            Errc::schema_violation);
}

// ---- monkey ----------------------------------------------------------------

TEST(Monkey, RepeatRunsThePointThatManyTimes) {
  SimClock clock;
  Recorder rec;
  Monkey m(parse(R"({"entries": [{"script": "s", "params": {"v": 1}, "repeat": 3}]})"), rec.runner(), clock);
  const auto final_state = m.run();
  EXPECT_EQ(final_state.mode, Mode::finished);
  ASSERT_EQ(rec.points.size(), 3u);
  for (std::uint32_t i = 0; i < 3; ++i) {
    EXPECT_EQ(rec.points[i].position, (Position{0, 0, i}));
    EXPECT_EQ(rec.points[i].params.at("v"), 1);
  }
  EXPECT_EQ(final_state.completed, 3u);
}

TEST(Monkey, RetryableOutcomesAreRetriedThenPause) {
  SimClock clock;
  Recorder rec;
  int failures = 2;
  rec.outcome = [&](const PointRequest&) { return failures-- > 0 ? retryable("trigger_timeout") : success(); };
  MonkeyOptions o;
  o.max_retries = 3;
  Monkey m(parse(R"({"entries": [{"script": "s"}]})"), rec.runner(), clock, o);
  EXPECT_EQ(m.run().completed, 1u);
  EXPECT_EQ(rec.points.size(), 3u);

  Recorder always;
  always.outcome = [](const PointRequest&) { return retryable("trigger_timeout"); };
  Monkey stuck(parse(R"({"entries": [{"script": "s"}]})"), always.runner(), clock, o);
  std::vector<MonkeyEvent> events;
  while (stuck.state().mode == Mode::running) stuck.step([&](const MonkeyEvent& e) { events.push_back(e); });
  EXPECT_EQ(always.points.size(), 4u);
  EXPECT_EQ(stuck.state().pause_reason, "trigger_timeout");
  EXPECT_EQ(events.back().type, MonkeyEvent::Type::paused);
}

TEST(Monkey, BeamEmptyPausesPollsAndResumesWithoutLosingPoints) {
  SimClock clock;
  Recorder rec;
  int empty_checks = 0;
  std::size_t calls = 0;
  auto precondition = [&]() -> std::optional<std::string> {
    ++calls;
    if (calls == 3) empty_checks = 4;
    if (empty_checks > 0) {
      --empty_checks;
      return "beam_empty";
    }
    return std::nullopt;
  };
  MonkeyOptions o;
  o.poll_interval = seconds(10);
  Monkey m(parse(R"({"entries": [{"script": "s", "scan": {"dims": [{"param": "x", "values": [1, 2, 3, 4, 5]}]}}]})"),
           rec.runner(), clock, o, precondition);
  std::vector<MonkeyEvent> events;
  const auto t0 = clock.now();
  EXPECT_EQ(m.run([&](const MonkeyEvent& e) { events.push_back(e); }).mode, Mode::finished);
  ASSERT_EQ(rec.points.size(), 5u);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(rec.points[i].params.at("x"), i + 1);
  const auto types = types_of(events);
  EXPECT_EQ(std::count(types.begin(), types.end(), MonkeyEvent::Type::paused), 1);
  EXPECT_EQ(std::count(types.begin(), types.end(), MonkeyEvent::Type::poll), 4);
  EXPECT_EQ(std::count(types.begin(), types.end(), MonkeyEvent::Type::resumed), 1);
  EXPECT_EQ(clock.now() - t0, seconds(40));
}

TEST(Monkey, UnsatisfiablePreconditionEscalates) {
  SimClock clock;
  Recorder rec;
  MonkeyOptions o;
  o.max_polls = 5;
  Monkey m(parse(R"({"entries": [{"script": "s"}]})"), rec.runner(), clock, o,
           []() -> std::optional<std::string> { return "beam_empty"; });
  EXPECT_EQ(error_of([&] { m.run(); }).code(), Errc::precondition_unsatisfiable);
  EXPECT_TRUE(rec.points.empty());
}

TEST(Monkey, OperatorPauseHoldsUntilResume) {
  SimClock clock;
  Recorder rec;
  Monkey m(parse(R"({"entries": [{"script": "s", "repeat": 4}]})"), rec.runner(), clock);
  m.step();
  m.post(Command::pause);
  for (int i = 0; i < 5; ++i) EXPECT_TRUE(m.step());
  EXPECT_EQ(rec.points.size(), 1u);
  EXPECT_EQ(m.state().pause_reason, "operator");
  m.post(Command::resume);
  EXPECT_EQ(m.run().mode, Mode::finished);
  EXPECT_EQ(rec.points.size(), 4u);
}

TEST(Monkey, FatalOutcomeStopsTheSchedule) {
  SimClock clock;
  Recorder rec;
  rec.outcome = [](const PointRequest&) {
    script::RunOutcome o;
    o.status = script::RunStatus::fatal;
    o.reason = "underflow";
    return o;
  };
  Monkey m(parse(R"({"entries": [{"script": "s"}, {"script": "t"}]})"), rec.runner(), clock);
  EXPECT_EQ(error_of([&] { m.run(); }).code(), Errc::fatal_script);
  EXPECT_EQ(m.state().mode, Mode::stopped);
  EXPECT_FALSE(m.step());
  EXPECT_EQ(rec.points.size(), 1u);
}

TEST(Monkey, RestartFromStateFileContinuesWhereItStopped) {
  testkit::TempDir tmp;
  SimClock clock;
  const auto schedule = parse(R"({"entries": [{"script": "s", "scan": {"dims": [{"param": "a", "values": [1, 2, 3]},
                                                                                {"param": "b", "values": [1, 2, 3]}]}},
                                              {"script": "t", "repeat": 2}]})");
  MonkeyOptions o;
  o.state_file = tmp / "monkey.json";
  Recorder first, second;
  {
    Monkey m(schedule, first.runner(), clock, o);
    EXPECT_FALSE(m.resumed_from_file());
    for (int i = 0; i < 5; ++i) m.step();
  }
  Monkey m(schedule_from_json(schedule_to_json(schedule)), second.runner(), clock, o);
  EXPECT_TRUE(m.resumed_from_file());
  EXPECT_EQ(m.run().mode, Mode::finished);
  std::vector<Position> all;
  for (const auto& p : first.points) all.push_back(p.position);
  for (const auto& p : second.points) all.push_back(p.position);
  ASSERT_EQ(all.size(), 11u);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(all[i], (Position{0, i, 0}));
  EXPECT_EQ(all[9], (Position{1, 0, 0}));
  EXPECT_EQ(all[10], (Position{1, 0, 1}));

  auto other = schedule;
  other.entries[1].repeat = 3;
  Monkey fresh(other, second.runner(), clock, o);
  EXPECT_FALSE(fresh.resumed_from_file());
}

TEST(Monkey, FeedbackEntryConvergesOnTheTarget) {
  SimClock clock;
  Recorder rec;
  double last = 0;
  rec.outcome = [&](const PointRequest& p) {
    last = 3.0 * p.params.at("x").get<double>() + 1.0;
    return success();
  };
  const auto s = parse(R"({"entries": [{"script": "tune", "feedback": {"observable": "det.obs",
      "objective": {"kind": "target", "value": 10}, "params": [{"name": "x", "lo": 0, "hi": 10}],
      "budget": 20, "tolerance": 0.01}}]})");
  std::vector<MonkeyEvent> events;
  Monkey m(s, rec.runner(), clock, {}, {}, [&](const std::string& name) -> std::optional<double> {
    EXPECT_EQ(name, "det.obs");
    return last;
  });
  EXPECT_EQ(m.run([&](const MonkeyEvent& e) { events.push_back(e); }).mode, Mode::finished);
  ASSERT_LE(rec.points.size(), 20u);
  double best = INFINITY;
  for (const auto& p : rec.points) best = std::min(best, std::abs(3.0 * p.params.at("x").get<double>() + 1.0 - 10.0));
  EXPECT_LE(best, 0.01);
  const auto types = types_of(events);
  EXPECT_EQ(static_cast<std::size_t>(std::count(types.begin(), types.end(), MonkeyEvent::Type::feedback)),
            rec.points.size());
}

TEST(Monkey, CrateRunnerExecutesLibraryScripts) {
  SimClock clock;
  rtio::CrateConfig cfg;
  cfg.seed = 1;
  rtio::Crate crate(cfg);
  ScriptLibrary lib;
  lib["ramp"] = script::script_from_json(json::parse(R"({"name": "ramp", "params": {"v": "10 V"},
      "steps": [{"op": "set_voltages_at_trigger", "trigger": "Trigger", "delay": "1 us", "pairs": [["hv0", "$v"]]}]})"));
  CrateRunner runner(crate, lib);
  Monkey m(parse(R"({"entries": [{"script": "ramp", "scan": {"dims": [{"param": "v", "values": ["10 V", "20 V"]}]}}]})"),
           std::ref(runner), clock, {}, {}, {}, &lib);
  EXPECT_EQ(m.run().completed, 2u);
  EXPECT_NEAR(crate.hv_setpoint(0), 20.0, 0.01);
}

// ---- tamer -----------------------------------------------------------------

TEST(Tamer, SynchronousEntriesStartTogether) {
  const auto schedule = parse(R"({"entries": [{"script": "a", "repeat": 3}, {"script": "b", "repeat": 1},
                                              {"script": "c", "repeat": 2}]})");
  SimClock c1, c2, c3;
  Recorder r1, r2, r3;
  MonkeyOptions o1, o2, o3;
  o1.crate = "c1", o1.point_duration = milliseconds(50);
  o2.crate = "c2", o2.point_duration = milliseconds(80);
  o3.crate = "c3", o3.point_duration = milliseconds(10);
  Monkey m1(schedule, r1.runner(), c1, o1), m2(schedule, r2.runner(), c2, o2), m3(schedule, r3.runner(), c3, o3);
  Tamer tamer({&m1, &m2, &m3}, TamerMode::synchronous);
  std::map<std::size_t, std::map<std::string, Clock::time_point>> starts;
  tamer.run([&](const TamerEvent& e) {
    if (e.event.type == MonkeyEvent::Type::entry_started) starts[e.event.state.position.entry][e.crate] = e.event.at;
  });
  ASSERT_EQ(starts.size(), 3u);
  for (const auto& [entry, by_crate] : starts) {
    ASSERT_EQ(by_crate.size(), 3u);
    EXPECT_EQ(by_crate.at("c1"), by_crate.at("c2")) << entry;
    EXPECT_EQ(by_crate.at("c1"), by_crate.at("c3")) << entry;
  }
  // Entry 1 opens after the slowest crate finished entry 0: 3 points at 80 ms.
  EXPECT_EQ(starts[1]["c1"] - starts[0]["c1"], milliseconds(240));
  EXPECT_EQ(r1.points.size(), 6u);
  EXPECT_EQ(r3.points.size(), 6u);
}

TEST(Tamer, IndependentMonkeysDoNotWait) {
  const auto schedule = parse(R"({"entries": [{"script": "a", "repeat": 2}, {"script": "b"}]})");
  SimClock c1, c2;
  Recorder r1, r2;
  MonkeyOptions o1, o2;
  o1.crate = "c1", o1.point_duration = milliseconds(10);
  o2.crate = "c2", o2.point_duration = milliseconds(70);
  Monkey m1(schedule, r1.runner(), c1, o1), m2(schedule, r2.runner(), c2, o2);
  std::map<std::string, Clock::time_point> second_entry;
  Tamer({&m1, &m2}, TamerMode::independent).run([&](const TamerEvent& e) {
    if (e.event.type == MonkeyEvent::Type::entry_started && e.event.state.position.entry == 1) {
      second_entry[e.crate] = e.event.at;
    }
  });
  EXPECT_EQ(second_entry.at("c2") - second_entry.at("c1"), milliseconds(120));
}

TEST(Tamer, FailureReleasesTheOthersAsStopped) {
  const auto schedule = parse(R"({"entries": [{"script": "a"}, {"script": "b"}]})");
  SimClock c1, c2;
  Recorder ok, bad;
  bad.outcome = [](const PointRequest&) {
    script::RunOutcome o;
    o.status = script::RunStatus::fatal;
    o.reason = "underflow";
    return o;
  };
  MonkeyOptions o1, o2;
  o1.crate = "c1";
  o2.crate = "c2";
  Monkey m1(schedule, ok.runner(), c1, o1), m2(schedule, bad.runner(), c2, o2);
  EXPECT_EQ(error_of([&] { Tamer({&m1, &m2}, TamerMode::synchronous).run({}); }).code(), Errc::fatal_script);
  EXPECT_EQ(m1.state().mode, Mode::stopped);
  EXPECT_EQ(ok.points.size(), 1u);
}

// ---- gateway ---------------------------------------------------------------

TEST(Gateway, CommandsAreValidatedAndForwarded) {
  SimClock clock;
  Recorder rec;
  Monkey m(parse(R"({"entries": [{"script": "s", "repeat": 3}]})"), rec.runner(), clock);
  GatewayOptions go;
  go.token_from_env = false;
  Gateway gw(go);
  gw.add_monkey("crate0", &m);

  const auto r = gw.command({{"type", "pause"}, {"crate", "crate0"}});
  EXPECT_EQ(r["ok"], true);
  m.step(gw.monkey_sink("crate0"));
  EXPECT_EQ(m.state().mode, Mode::paused);
  EXPECT_EQ(gw.snapshot()["monkeys"][0]["state"]["mode"], "paused");
  EXPECT_EQ(rec.points.size(), 0u);

  auto bad = error_of([&] { gw.command({{"type", "pause"}, {"crate", "crate9"}}); });
  EXPECT_EQ(bad.code(), Errc::invalid_command);
  EXPECT_EQ(message_of(bad).rfind("crate:", 0), 0u);
  EXPECT_EQ(error_of([&] { gw.command({{"type", "reboot"}}); }).code(), Errc::invalid_command);
  EXPECT_EQ(error_of([&] { gw.command(json::array()); }).code(), Errc::invalid_command);

  gw.on_submit([](const Schedule& s) { return json{{"entries", s.entries.size()}}; });
  bad = error_of([&] { gw.command({{"type", "submit_schedule"}, {"schedule", {{"entries", json::array()}}}}); });
  EXPECT_EQ(bad.code(), Errc::invalid_command);
  EXPECT_EQ(message_of(bad).rfind("schedule.entries", 0), 0u);
  const auto ok = gw.command({{"type", "submit_schedule"}, {"schedule", json::parse(R"({"entries": [{"script": "s"}]})")}});
  EXPECT_EQ(ok["result"]["entries"], 1);
  EXPECT_EQ(error_of([&] { gw.command({{"type", "acknowledge_error"}, {"id", 1}}); }).code(), Errc::invalid_command);

  gw.command({{"type", "resume"}});
  EXPECT_EQ(m.run().completed, 3u);
}

TEST(Gateway, BearerTokenFromOptionsOrEnvironment) {
  GatewayOptions go;
  go.token = "s3cret";
  Gateway gw(go);
  gw.authorize("Bearer s3cret");
  EXPECT_EQ(error_of([&] { gw.authorize("Bearer wrong"); }).code(), Errc::unauthorized);
  EXPECT_EQ(error_of([&] { gw.authorize(""); }).code(), Errc::unauthorized);

  ::setenv(kTokenEnv, "from-env", 1);
  Gateway env_gw;
  ::unsetenv(kTokenEnv);
  env_gw.authorize("Bearer from-env");
  EXPECT_EQ(error_of([&] { env_gw.authorize("Bearer s3cret"); }).code(), Errc::unauthorized);

  Gateway open_gw;
  open_gw.authorize("");
}

TEST(Gateway, HttpEndpoints) {
  GatewayOptions go;
  go.token = "tok";
  Gateway gw(go);
  const auto port = gw.start();
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(5, 0);

  auto res = cli.Get("/v1/snapshot");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 401);

  const httplib::Headers auth{{"Authorization", "Bearer tok"}};
  res = cli.Get("/v1/snapshot", auth);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  const auto snap = json::parse(res->body);
  EXPECT_TRUE(snap.contains("guardians"));
  EXPECT_TRUE(snap.contains("errors"));
  EXPECT_TRUE(snap["monkeys"].is_array());

  res = cli.Post("/v1/command", auth, "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["error"], "InvalidCommand");

  std::thread publisher([&] {
    for (int i = 0; i < 50; ++i) {
      gw.publish({{"type", "test"}, {"n", i}});
      std::this_thread::sleep_for(milliseconds(20));
    }
  });
  std::string buffer;
  std::vector<json> lines;
  httplib::Client stream("127.0.0.1", port);
  stream.Get("/v1/events", auth, [&](const char* data, std::size_t n) {
    buffer.append(data, n);
    for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n')) {
      lines.push_back(json::parse(buffer.substr(0, nl)));
      buffer.erase(0, nl + 1);
    }
    return lines.size() < 3;
  });
  publisher.join();
  ASSERT_GE(lines.size(), 3u);
  for (const auto& l : lines) EXPECT_TRUE(l.contains("type"));
  gw.stop();
}
