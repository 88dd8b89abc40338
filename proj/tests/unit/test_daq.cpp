#include <gtest/gtest.h>

#include <thread>

#include "circus/actor/node.hpp"
#include "circus/daq/daq_manager.hpp"
#include "circus/daq/daq_service.hpp"
#include "circus/error.hpp"
#include "support.hpp"

using namespace circus;
using namespace circus::daq;
namespace fs = std::filesystem;

namespace {

DataAtom scalar_atom(const std::string& name, double v) { return {name, timestamp_now(), make_scalar(v)}; }

std::size_t data_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().filename() != "manifest.json") ++n;
  }
  return n;
}

DaqOptions nosync() {
  DaqOptions o;
  o.sync = false;
  return o;
}

}  // namespace

TEST(DaqNames, SanitizedAndNumbered) {
  EXPECT_EQ(sanitize_name("mcp/waveform"), "mcp.waveform");
  EXPECT_EQ(atom_file_name("mcp_waveform", 1), "mcp_waveform__000001.json");
  EXPECT_EQ(atom_file_name("x", 1234567), "x__1234567.json");
}

TEST(DaqRuns, FreshIdOpensAndDuplicateRaises) {
  testkit::TempDir tmp;
  DaqManager daq(tmp.path(), nosync());
  const auto h = daq.run_start("r1");
  EXPECT_EQ(h.state, RunState::open);
  try {
    daq.run_start("r1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::duplicate_run);
  }
}

TEST(DaqRuns, HundredSequentialRunsHaveIncreasingIds) {
  testkit::TempDir tmp;
  DaqManager daq(tmp.path(), nosync());
  std::string prev;
  for (int i = 0; i < 100; ++i) {
    const auto id = daq.run_start().run_id;
    EXPECT_GT(id, prev);
    prev = id;
    daq.run_stop(id);
    EXPECT_TRUE(fs::exists(runs_dir(tmp.path()) / id / "manifest.json"));
  }
  EXPECT_EQ(prev, "000100");
}

TEST(DaqWrite, FileLandsUnderTheRun) {
  testkit::TempDir tmp;
  DaqManager daq(tmp.path(), nosync());
  daq.run_start("r1");
  const auto path = daq.write_atom("r1", {"mcp_waveform", timestamp_now(), make_array(std::vector<double>{0, 1e-9, 1})});
  EXPECT_EQ(path, runs_dir(tmp.path()) / "r1" / "mcp_waveform__000001.json");
  EXPECT_EQ(decode_atom(testkit::read_file(path)).name, "mcp_waveform");
}

TEST(DaqWrite, AfterStopIsRunClosed) {
  testkit::TempDir tmp;
  DaqManager daq(tmp.path(), nosync());
  daq.run_start("r1");
  daq.run_stop("r1");
  try {
    daq.write_atom("r1", scalar_atom("x", 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::run_closed);
  }
}

TEST(DaqWrite, TypeChangeIsRejected) {
  testkit::TempDir tmp;
  DaqManager daq(tmp.path(), nosync());
  daq.run_start("r1");
  daq.write_atom("r1", scalar_atom("x", 1));
  try {
    daq.write_atom("r1", {"x", timestamp_now(), make_scalar("text")});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::type_changed);
  }
}

TEST(DaqWrite, ConcurrentProducersLoseNothing) {
  testkit::TempDir tmp;
  DaqManager daq(tmp.path(), nosync());
  daq.run_start("r1");
  std::vector<std::thread> producers;
  for (int p = 0; p < 5; ++p) {
    producers.emplace_back([&, p] {
      for (int i = 0; i < 2000; ++i) {
        for (;;) {
          try {
            daq.submit("r1", scalar_atom("svc" + std::to_string(p), i));
            break;
          } catch (const Error& e) {
            if (e.code() != Errc::resource_exhausted) throw;
            std::this_thread::yield();
          }
        }
      }
    });
  }
  for (auto& t : producers) t.join();
  const auto summary = daq.run_stop("r1");
  EXPECT_EQ(summary.atom_count, 10000u);
  const auto dir = runs_dir(tmp.path()) / "r1";
  EXPECT_EQ(data_files(dir), 10000u);
  for (int p = 0; p < 5; ++p) {
    for (int i = 1; i <= 2000; ++i) {
      ASSERT_TRUE(fs::exists(dir / atom_file_name("svc" + std::to_string(p), i))) << p << " " << i;
    }
  }
}

TEST(DaqSummary, EmptyRunAndSortedNames) {
  testkit::TempDir tmp;
  DaqManager daq(tmp.path(), nosync());
  daq.run_start("empty");
  EXPECT_EQ(daq.run_stop("empty").atom_count, 0u);
  daq.run_start("three");
  for (auto n : {"zeta", "alpha", "mu/x"}) daq.write_atom("three", scalar_atom(n, 1));
  const auto s = daq.run_stop("three");
  EXPECT_EQ(s.names, (std::vector<std::string>{"alpha", "mu/x", "zeta"}));
  EXPECT_EQ(s.atom_count, data_files(runs_dir(tmp.path()) / "three"));
  const auto m = read_manifest(runs_dir(tmp.path()) / "three");
  ASSERT_EQ(m.atoms.size(), 3u);
  EXPECT_TRUE(m.stopped_at.has_value());
  for (const auto& a : m.atoms) {
    if (a.name == "mu/x") EXPECT_EQ(a.file_name, "mu.x");
  }
}

TEST(DaqService, BusCommands) {
  testkit::TempDir tmp;
  actor::Node::Options o;
  o.name = "n1";
  actor::Node node(o);
  auto daq = std::make_shared<DaqManager>(tmp.path(), nosync());
  const auto addr = spawn_daq_service(node, daq);

  auto request = [&](const std::string& kind, DataAtom payload) {
    actor::Envelope env;
    env.src = {"n1", "test"};
    env.dst = addr;
    env.kind = kind;
    env.payload = std::move(payload);
    return node.request(env);
  };
  const auto started = request("run_start", actor::make_payload("run_start", make_scalar("bus1")));
  EXPECT_EQ(started.kind, "run_started");
  const auto stored = request("write", scalar_atom("temp", 4.2));
  EXPECT_EQ(stored.kind, "stored");
  const auto stopped = request("run_stop", actor::make_payload("run_stop", make_scalar("bus1")));
  EXPECT_EQ(stopped.kind, "run_stopped");
  EXPECT_EQ(summary_from_payload(stopped.payload.data).atom_count, 1u);
}
