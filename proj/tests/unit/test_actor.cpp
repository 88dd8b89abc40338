#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <functional>
#include <thread>

#include "circus/actor/envelope.hpp"
#include "circus/actor/error_manager.hpp"
#include "circus/actor/guardian.hpp"
#include "circus/actor/node.hpp"
#include "circus/error.hpp"

using namespace circus;
using namespace circus::actor;
using namespace std::chrono_literals;

namespace {

TimePoint t0() { return TimePoint{} + 1000s; }

bool wait_for(const std::function<bool()>& pred, std::chrono::milliseconds limit) {
  const auto end = std::chrono::steady_clock::now() + limit;
  while (std::chrono::steady_clock::now() < end) {
    if (pred()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return pred();
}

Health service_health(const Node& node, const std::string& svc) {
  for (const auto& row : node.guardian_snapshot().services) {
    if (row.service == svc) return row.status;
  }
  return Health::alive;
}

Health peer_health(const Node& node, const std::string& peer) {
  for (const auto& row : node.guardian_snapshot().peers) {
    if (row.node == peer) return row.status;
  }
  return Health::alive;
}

Handler echo() {
  return [](ServiceContext& ctx, const Envelope& env) {
    if (env.kind == "ping") ctx.reply(env, "pong", env.payload);
  };
}

Node::Options fast(const std::string& name, bool listen = false) {
  Node::Options o;
  o.name = name;
  if (listen) o.port = 0;
  o.peer_interval = 100ms;
  o.restart_backoff = 100ms;
  return o;
}

}  // namespace

// ---- guardian core --------------------------------------------------------

TEST(GuardianCore, HealthyServicesProduceNoVerdicts) {
  GuardianCore g(1s);
  g.add_service("a", "x", 1s, RestartPolicy::never(), t0());
  g.add_service("b", "x", 1s, RestartPolicy::never(), t0());
  for (int i = 1; i <= 10; ++i) {
    g.beat("a", t0() + i * 1s);
    g.beat("b", t0() + i * 1s);
    EXPECT_TRUE(g.tick(t0() + i * 1s + 100ms).empty());
  }
}

TEST(GuardianCore, SilentServiceGoesLateThenDeadAfterThreeIntervals) {
  GuardianCore g(1s);
  g.add_service("a", "x", 1s, RestartPolicy::never(), t0());
  EXPECT_TRUE(g.tick(t0() + 1400ms).empty());
  auto v = g.tick(t0() + 1500ms);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, VerdictKind::late);
  EXPECT_TRUE(g.tick(t0() + 2999ms).empty());
  v = g.tick(t0() + 3s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, VerdictKind::dead);
  EXPECT_EQ(g.services().at("a").status, Health::dead);
}

TEST(GuardianCore, BeatAfterDeathRecovers) {
  GuardianCore g(1s);
  g.add_service("a", "x", 1s, RestartPolicy::never(), t0());
  g.tick(t0() + 5s);
  const auto v = g.beat("a", t0() + 6s);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->kind, VerdictKind::recovered);
}

TEST(GuardianCore, RestartBackoffDoublesAndExhausts) {
  GuardianCore g(1s, 1s);
  EXPECT_EQ(g.backoff(0), 1s);
  EXPECT_EQ(g.backoff(1), 2s);
  EXPECT_EQ(g.backoff(2), 4s);
  g.add_service("a", "x", 1s, RestartPolicy::on_failure(1), t0());
  g.tick(t0() + 1500ms);
  g.tick(t0() + 3s);
  auto v = g.tick(t0() + 4s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, VerdictKind::restart);
  g.tick(t0() + 5500ms);
  v = g.tick(t0() + 7s);
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].kind, VerdictKind::dead);
  EXPECT_EQ(v[1].kind, VerdictKind::restarts_exhausted);
}

TEST(GuardianCore, PeerSilenceMarksPeerDeadAndBeatRevives) {
  GuardianCore g(1s);
  g.add_peer("n2", t0());
  g.tick(t0() + 1500ms);
  auto v = g.tick(t0() + 3s);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0].kind, VerdictKind::peer_dead);
  const auto back = g.peer_beat("n2", t0() + 4s);
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(back->kind, VerdictKind::peer_alive);
}

TEST(GuardianCore, NextDeadlineIsTheEarliestTransition) {
  GuardianCore g(1s);
  g.add_service("a", "x", 2s, RestartPolicy::never(), t0());
  g.add_peer("n2", t0());
  EXPECT_EQ(g.next_deadline(), t0() + 1500ms);
}

// ---- error store -----------------------------------------------------------

TEST(ErrorStore, UnknownAcknowledgeRaises) {
  ErrorStore s("n1");
  try {
    s.acknowledge(12345);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_id);
  }
}

TEST(ErrorStore, ThreeReplicasMergeToThirtyOrderedRecords) {
  std::vector<std::unique_ptr<ErrorStore>> stores;
  for (auto n : {"n1", "n2", "n3"}) stores.push_back(std::make_unique<ErrorStore>(n));
  std::vector<ErrorRecord> all;
  for (int round = 0; round < 10; ++round) {
    for (std::size_t i = 0; i < stores.size(); ++i) {
      ErrorRecord r;
      r.source = {"n" + std::to_string(i + 1), "svc"};
      r.code = "E" + std::to_string(round);
      r.text = "round " + std::to_string(round);
      r.at = make_timestamp(100 + round, 0);
      auto stored = stores[i]->report(r);
      all.push_back(stored);
      for (auto& other : stores) {
        if (other.get() != stores[i].get()) other->merge(stored);
      }
    }
  }
  for (const auto& s : stores) {
    const auto list = s->list();
    ASSERT_EQ(list.size(), 30u);
    std::map<std::string, std::uint64_t> last;
    for (const auto& r : list) {
      auto& prev = last[r.source.node];
      EXPECT_GT(r.id, prev);
      prev = r.id;
    }
  }
  EXPECT_EQ(stores[0]->list(), stores[2]->list());
}

TEST(ErrorStore, FiltersAndAutoClear) {
  ErrorStore s("n1");
  ErrorRecord w;
  w.severity = Severity::warning;
  w.code = "W";
  auto rw = s.report(w);
  ErrorRecord f;
  f.severity = Severity::fatal;
  f.code = "F";
  auto rf = s.report(f);
  s.acknowledge(rw.id);
  s.acknowledge(rf.id);
  EXPECT_EQ(s.list({Severity::error, {}, {}, false}).size(), 1u);
  EXPECT_EQ(s.auto_clear(), 1u);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(record_from_json(record_to_json(rf)), rf);
  EXPECT_EQ(record_from_payload(record_to_payload(rf)), rf);
}

// ---- envelope framing -------------------------------------------------------

TEST(Envelope, FrameRoundTrip) {
  Envelope env;
  env.id = 7;
  env.src = {"n1", "a"};
  env.dst = {"n2", "b"};
  env.kind = "ping";
  env.payload = make_payload("ping", make_cluster({{"seq", make_scalar(std::int32_t{3})}}));
  env.sent_at = make_timestamp(5, 6);
  env.in_reply_to = 3;
  const auto frame = encode_frame(env);
  ASSERT_EQ(frame.back(), '\n');
  EXPECT_EQ(frame.find('\n'), frame.size() - 1);
  const auto back = decode_frame(frame);
  EXPECT_EQ(back.id, env.id);
  EXPECT_EQ(back.src, env.src);
  EXPECT_EQ(back.dst, env.dst);
  EXPECT_EQ(back.kind, env.kind);
  EXPECT_EQ(back.payload, env.payload);
  EXPECT_EQ(back.in_reply_to, env.in_reply_to);
  EXPECT_THROW(decode_frame("{not json"), Error);
}

// ---- node ------------------------------------------------------------------

TEST(Node, SpawnedServiceIsAliveAndNamesAreUnique) {
  Node node(fast("n1"));
  node.spawn_service({"DAQ Manager", "", "daq", 100ms, {}}, echo());
  EXPECT_TRUE(wait_for([&] { return service_health(node, "DAQ Manager") == Health::alive; }, 1s));
  try {
    node.spawn_service({"DAQ Manager", "", "daq", 100ms, {}}, echo());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::duplicate_name);
  }
}

TEST(Node, HundredServicesAllAlive) {
  Node node(fast("n1"));
  for (int i = 0; i < 100; ++i) node.spawn_service({"svc" + std::to_string(i), "", "x", 200ms, {}}, echo());
  std::this_thread::sleep_for(300ms);
  const auto snap = node.guardian_snapshot();
  ASSERT_EQ(snap.services.size(), 100u + 1u);  // plus the error manager
  for (const auto& row : snap.services) EXPECT_EQ(row.status, Health::alive) << row.service;
}

TEST(Node, LocalPingPong) {
  Node node(fast("n1"));
  node.spawn_service({"echo", "", "echo", 100ms, {}}, echo());
  Envelope env;
  env.src = {"n1", "test"};
  env.dst = {"n1", "echo"};
  env.kind = "ping";
  env.payload = make_payload("ping");
  const auto start = std::chrono::steady_clock::now();
  const auto reply = node.request(env);
  EXPECT_EQ(reply.kind, "pong");
  EXPECT_LT(std::chrono::steady_clock::now() - start, 10ms);
}

TEST(Node, UnknownDestination) {
  Node node(fast("n1"));
  Envelope env;
  env.src = {"n1", "test"};
  env.dst = {"n1", "nobody"};
  env.kind = "ping";
  env.payload = make_payload("ping");
  try {
    node.send(env);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_destination);
  }
}

TEST(Node, TenThousandMessagesArriveInSendOrder) {
  Node node(fast("n1"));
  std::vector<std::int32_t> got;
  std::mutex mu;
  node.spawn_service({"sink", "", "sink", 100ms, {}}, [&](ServiceContext&, const Envelope& env) {
    std::lock_guard lk(mu);
    got.push_back(std::get<std::int32_t>(env.payload.data.scalar()));
  });
  for (std::int32_t i = 0; i < 10000; ++i) {
    Envelope env;
    env.src = {"n1", "test"};
    env.dst = {"n1", "sink"};
    env.kind = "seq";
    env.payload = {"seq", {}, make_scalar(i)};
    node.send(env);
  }
  ASSERT_TRUE(wait_for([&] { std::lock_guard lk(mu); return got.size() == 10000; }, 10s));
  for (std::int32_t i = 0; i < 10000; ++i) ASSERT_EQ(got[i], i);
}

TEST(Node, HandlerErrorIsRethrownToTheRequester) {
  Node node(fast("n1"));
  node.spawn_service({"picky", "", "x", 100ms, {}},
                     [](ServiceContext&, const Envelope&) { fail(Errc::invalid_command, "nope"); });
  Envelope env;
  env.src = {"n1", "test"};
  env.dst = {"n1", "picky"};
  env.kind = "anything";
  env.payload = make_payload("anything");
  try {
    node.request(env);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_command);
  }
}

TEST(Node, KilledServiceIsMarkedDeadAndLogged) {
  Node node(fast("n1"));
  node.spawn_service({"victim", "", "x", 100ms, RestartPolicy::never()}, echo());
  std::this_thread::sleep_for(150ms);
  node.kill_service("victim");
  EXPECT_TRUE(wait_for([&] { return service_health(node, "victim") == Health::dead; }, 500ms));
  const auto errs = node.list_errors({std::nullopt, std::nullopt, std::string("ServiceDead"), false});
  ASSERT_EQ(errs.size(), 1u);
  EXPECT_EQ(errs[0].source.service, "victim");
}

TEST(Node, KilledServiceIsRestartedUnderItsPolicy) {
  Node node(fast("n1"));
  node.spawn_service({"phoenix", "", "echo", 100ms, RestartPolicy::on_failure(3)}, echo());
  std::this_thread::sleep_for(150ms);
  node.kill_service("phoenix");
  ASSERT_TRUE(wait_for([&] { return !node.list_errors({{}, {}, std::string("ServiceRestarted"), false}).empty(); }, 2s));
  EXPECT_TRUE(wait_for([&] { return service_health(node, "phoenix") == Health::alive; }, 1s));
  Envelope env;
  env.src = {"n1", "test"};
  env.dst = {"n1", "phoenix"};
  env.kind = "ping";
  env.payload = make_payload("ping");
  EXPECT_EQ(node.request(env).kind, "pong");
}

TEST(Node, RemoteRequestErrorsReplicateAndSeveredPeerDies) {
  Node a(fast("a", true));
  Node b(fast("b", true));
  b.spawn_service({"echo", "", "echo", 100ms, {}}, echo());
  EXPECT_EQ(a.connect_peer("127.0.0.1", b.port()), "b");
  ASSERT_TRUE(wait_for([&] { return a.resolve_kind("echo").has_value(); }, 2s));
  EXPECT_EQ(a.resolve_kind("echo")->node, "b");

  Envelope env;
  env.src = {"a", "test"};
  env.dst = {"b", "echo"};
  env.kind = "ping";
  env.payload = make_payload("ping");
  EXPECT_EQ(a.request(env).kind, "pong");

  const auto rec = a.report_error(Severity::error, {"a", "test"}, "Boom", "replicate me");
  ASSERT_TRUE(wait_for([&] { return !b.list_errors({{}, {}, std::string("Boom"), false}).empty(); }, 2s));
  b.acknowledge_error(rec.id);
  ASSERT_TRUE(wait_for([&] { return a.list_errors({{}, {}, std::string("Boom"), true}).empty(); }, 2s));

  a.sever("b");
  EXPECT_TRUE(wait_for([&] { return peer_health(a, "b") == Health::dead && peer_health(b, "a") == Health::dead; },
                       1s));
  a.heal("b");
  EXPECT_TRUE(wait_for([&] { return peer_health(a, "b") == Health::alive && peer_health(b, "a") == Health::alive; },
                       2s));
}
