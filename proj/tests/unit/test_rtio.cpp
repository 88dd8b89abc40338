#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "circus/error.hpp"
#include "circus/rtio/config.hpp"
#include "circus/rtio/crate.hpp"
#include "circus/rtio/dac.hpp"
#include "circus/rtio/trace.hpp"

using namespace circus;
using namespace circus::rtio;

namespace {

CrateConfig quiet_config(std::uint64_t seed = 1) {
  CrateConfig c;
  c.seed = seed;
  c.hv_noise_rms = 0.0;
  return c;
}

std::vector<TimelineEvent> hv_step(MachineTime at, std::initializer_list<std::uint16_t> channels, double dac_v) {
  std::vector<TimelineEvent> evs;
  std::uint32_t mask = 0;
  for (auto ch : channels) {
    evs.push_back({at, Channel::fastino(0), DacWord{static_cast<std::uint8_t>(ch), dac_code(dac_v).code}});
    mask |= 1u << ch;
  }
  evs.push_back({at, Channel::fastino(0), DacUpdate{mask}});
  return evs;
}

}  // namespace

TEST(Dac, Boundaries) {
  EXPECT_EQ(dac_code(-10.0).code, 0);
  EXPECT_EQ(dac_code(10.0).code, 65535);
  EXPECT_EQ(dac_code(0.0).code, 32768);
  EXPECT_NEAR(dac_volts(32768), 20.0 / 65535.0 * 32768 - 10.0, 1e-12);
  EXPECT_NEAR(dac_volts(32768), 1.526e-4, 1e-7);
  EXPECT_TRUE(dac_code(11.0).clamped);
  EXPECT_EQ(dac_code(-11.0).code, 0);
}

TEST(Dac, CalibrationStepIsAboutOneTenthVoltAtTheAmplifier) {
  const double step = dac_volts(327) - dac_volts(0);
  EXPECT_NEAR(step * 20.0 / 20.0, 327 * 20.0 / 65535, 1e-12);
  EXPECT_NEAR(step, 0.09979, 1e-5);
}

TEST(Dac, QuantizationErrorIsAtMostHalfAnLsb) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> v(-10.0, 10.0);
  for (int i = 0; i < 100000; ++i) {
    const double x = v(rng);
    ASSERT_LE(std::abs(dac_volts(dac_code(x).code) - x), kDacStepVolts / 2 + 1e-12);
  }
}

TEST(Timeline, EventExecutesAtItsTimestamp) {
  Crate crate(quiet_config());
  const auto at = crate.now() + MachineTime::us(10);
  crate.schedule({at, Channel::ttl(4), TtlSet{true}});
  const auto delta = crate.run_until(at + MachineTime::us(1));
  ASSERT_EQ(delta.samples("ttl4").size(), 1u);
  EXPECT_EQ(delta.samples("ttl4")[0].at, at);
}

TEST(Timeline, PastEventUnderflowsAndLeavesTimelineUnchanged) {
  Crate crate(quiet_config());
  crate.run_until(MachineTime::ms(1));
  try {
    crate.schedule({crate.now() - MachineTime(1), Channel::ttl(4), TtlSet{true}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::underflow);
  }
  try {
    crate.schedule({crate.now(), Channel::ttl(4), TtlSet{true}});
    FAIL() << "inside the slack window";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::underflow);
  }
  EXPECT_EQ(crate.pending(), 0u);
}

TEST(Timeline, ScheduleAllIsAllOrNothing) {
  Crate crate(quiet_config());
  std::vector<TimelineEvent> evs{{MachineTime::ms(1), Channel::ttl(4), TtlSet{true}},
                                 {MachineTime(0), Channel::ttl(5), TtlSet{true}}};
  EXPECT_THROW(crate.schedule_all(evs), Error);
  EXPECT_EQ(crate.pending(), 0u);
}

TEST(Timeline, InputLinesRejectOutputEvents) {
  Crate crate(quiet_config());
  try {
    crate.schedule({MachineTime::ms(1), Channel::ttl(0), TtlSet{true}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::direction_error);
  }
}

TEST(Timeline, RandomSubmissionOrderYieldsSortedTrace) {
  Crate crate(quiet_config());
  std::mt19937_64 rng(11);
  std::set<std::int64_t> times;
  while (times.size() < 1000) times.insert(std::uniform_int_distribution<std::int64_t>(2'000, 10'000'000)(rng));
  std::vector<std::int64_t> order(times.begin(), times.end());
  std::shuffle(order.begin(), order.end(), rng);
  bool level = false;
  for (auto t : order) crate.schedule({MachineTime(t), Channel::ttl(4), TtlSet{level = !level}});
  crate.run_until(MachineTime(10'000'001));
  const auto& s = crate.trace().samples("ttl4");
  ASSERT_EQ(s.size(), 1000u);
  std::vector<std::int64_t> got;
  for (const auto& x : s) got.push_back(x.at.mu());
  EXPECT_EQ(got, std::vector<std::int64_t>(times.begin(), times.end()));
}

TEST(Timeline, TiesExecuteInSubmissionOrder) {
  Crate crate(quiet_config());
  crate.schedule({MachineTime::us(5), Channel::ttl(4), TtlSet{true}});
  crate.schedule({MachineTime::us(5), Channel::ttl(4), TtlSet{false}});
  crate.run_until(MachineTime::us(6));
  EXPECT_FALSE(crate.ttl_level(4));
}

TEST(Timeline, NoPendingEventsGiveAnEmptyDelta) {
  Crate crate(quiet_config());
  EXPECT_TRUE(crate.run_until(MachineTime::ms(5)).empty());
}

TEST(Gate, ReturnsInjectedEdge) {
  Crate crate(quiet_config());
  crate.inject_edge(0, MachineTime(5000), true);
  EXPECT_EQ(crate.gate_rising(0, MachineTime::s(120)), MachineTime(5000));
}

TEST(Gate, NoEdgeTimesOutAtTheEndOfTheWindow) {
  Crate crate(quiet_config());
  EXPECT_FALSE(crate.gate_rising(0, MachineTime::ms(3)).has_value());
  EXPECT_EQ(crate.now(), MachineTime::ms(3));
}

TEST(Gate, ReturnsTheFirstOfSeveralEdges) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Crate crate(quiet_config());
    std::vector<std::int64_t> edges;
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < n; ++i) edges.push_back(std::uniform_int_distribution<std::int64_t>(10, 100'000)(rng));
    for (auto e : edges) crate.inject_edge(0, MachineTime(e), true);
    const auto window = MachineTime(std::uniform_int_distribution<std::int64_t>(0, 120'000)(rng));
    const auto first = *std::min_element(edges.begin(), edges.end());
    const auto got = crate.gate_rising(0, window);
    if (first <= window.mu()) {
      ASSERT_EQ(got, MachineTime(first));
    } else {
      ASSERT_FALSE(got.has_value());
    }
  }
}

TEST(Gate, TwoEdgesTenMuApartReturnsTheFirst) {
  Crate crate(quiet_config());
  crate.inject_edge(0, MachineTime(1000), true);
  crate.inject_edge(0, MachineTime(1010), true);
  EXPECT_EQ(crate.gate_rising(0, MachineTime::ms(1)), MachineTime(1000));
  EXPECT_EQ(crate.gate_rising(0, MachineTime::ms(1)), MachineTime(1010));
}

TEST(Triggers, NamedTriggerReachesTheMappedInput) {
  Crate crate(quiet_config());
  crate.inject_trigger("bunch_arrival", MachineTime::us(50));
  EXPECT_EQ(crate.gate_rising(3, MachineTime::ms(1)), MachineTime::us(50));
}

TEST(Triggers, UnknownNameRaises) {
  Crate crate(quiet_config());
  try {
    crate.inject_trigger("positron_bunch", MachineTime::us(50));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::unknown_trigger);
  }
}

TEST(Triggers, CascadeOrderIsPreservedInTheTrace) {
  Crate crate(quiet_config());
  const auto bunch = crate.inject_cycle(MachineTime::ms(1));
  crate.run_until(bunch + MachineTime::ms(1));
  const auto ad = crate.trace().rising_edges("ttl0");
  const auto elena = crate.trace().rising_edges("ttl1");
  const auto pre = crate.trace().rising_edges("ttl2");
  const auto arr = crate.trace().rising_edges("ttl3");
  ASSERT_EQ(ad.size(), 1u);
  ASSERT_EQ(arr.size(), 1u);
  EXPECT_LT(ad[0], elena[0]);
  EXPECT_LT(elena[0], pre[0]);
  EXPECT_LT(pre[0], arr[0]);
  EXPECT_EQ(arr[0], bunch);
}

TEST(Dma, PlaybackChangesEveryOutputAtOnce) {
  Crate crate(quiet_config());
  std::vector<TimelineEvent> seq;
  for (std::uint8_t ch : {0, 1, 2}) seq.push_back({MachineTime(0), Channel::fastino(0), DacWord{ch, dac_code(1.0).code}});
  seq.push_back({MachineTime(0), Channel::fastino(0), DacUpdate{0b111}});
  const auto h = crate.dma_record("ramp", seq);
  const auto T = MachineTime::us(50);
  crate.dma_playback(h, T);
  crate.run_until(T + MachineTime::us(1));
  for (int ch = 0; ch < 3; ++ch) {
    const auto& s = crate.trace().samples("dac" + std::to_string(ch));
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].at, T);
  }
}

TEST(Dma, EmptySequenceIsANoOp) {
  Crate crate(quiet_config());
  crate.dma_playback(crate.dma_record("nothing", {}), MachineTime::us(5));
  EXPECT_EQ(crate.pending(), 0u);
}

TEST(Dma, RepeatedPlaybackGivesIdenticalSegments) {
  Crate crate(quiet_config());
  std::vector<TimelineEvent> seq{{MachineTime(0), Channel::ttl(4), TtlSet{true}},
                                 {MachineTime::us(3), Channel::ttl(4), TtlSet{false}}};
  auto dac = hv_step(MachineTime::us(1), {0, 5}, 2.0);
  seq.insert(seq.end(), dac.begin(), dac.end());
  const auto h = crate.dma_record("pulse", seq);
  const auto T = MachineTime::us(10);
  crate.dma_playback(h, T);
  const auto first = crate.run_until(T + MachineTime::ms(1)).relative_to(T);
  crate.dma_playback(h, T + MachineTime::ms(2));
  const auto second = crate.run_until(T + MachineTime::ms(3)).relative_to(T + MachineTime::ms(2));
  EXPECT_EQ(first, second);
  EXPECT_FALSE(first.empty());
}

TEST(Dma, InterleavedWithDirectEventsMatchesManualSchedule) {
  const auto build = [](bool use_dma) {
    Crate crate(quiet_config());
    std::vector<TimelineEvent> seq{{MachineTime(0), Channel::ttl(5), TtlSet{true}},
                                   {MachineTime::us(2), Channel::ttl(5), TtlSet{false}}};
    auto dac = hv_step(MachineTime::us(1), {3}, -4.0);
    seq.insert(seq.end(), dac.begin(), dac.end());
    const auto T = MachineTime::us(20);
    crate.schedule({T + MachineTime::us(1), Channel::ttl(4), TtlSet{true}});
    if (use_dma) {
      crate.dma_playback(crate.dma_record("s", seq), T);
    } else {
      for (auto ev : seq) {
        ev.at += T;
        crate.schedule(ev);
      }
    }
    crate.schedule({T + MachineTime::us(5), Channel::ttl(4), TtlSet{false}});
    crate.run_until(MachineTime::ms(1));
    return crate.trace();
  };
  EXPECT_EQ(build(true), build(false));
}

TEST(Amplifier, NominalChannelGivesTwentyVoltsForOneVolt) {
  Crate crate(quiet_config());
  crate.schedule({MachineTime::us(2), Channel::hv(0), RelaySet{false}});
  crate.schedule_all(hv_step(MachineTime::us(3), {0}, 1.0));
  crate.run_until(MachineTime::us(4));
  EXPECT_NEAR(crate.hv_output(0), 20.0 * dac_volts(dac_code(1.0).code), 1e-12);
  EXPECT_NEAR(crate.hv_output(0), 20.0, 20.0 * kDacStepVolts);
}

TEST(Amplifier, OpenRelayReadsZero) {
  Crate crate(quiet_config());
  crate.schedule_all(hv_step(MachineTime::us(3), {0}, 5.0));
  crate.run_until(MachineTime::us(4));
  EXPECT_EQ(crate.hv_output(0), 0.0);
}

TEST(Amplifier, GainAndOffsetArithmetic) {
  auto cfg = quiet_config();
  cfg.hv_channels[2] = {20.3, 0.15};
  Crate crate(cfg);
  crate.schedule({MachineTime::us(2), Channel::hv(2), RelaySet{false}});
  crate.schedule_all(hv_step(MachineTime::us(3), {2}, 5.0));
  crate.run_until(MachineTime::us(4));
  EXPECT_NEAR(crate.hv_output(2), 20.3 * dac_volts(dac_code(5.0).code) + 0.15, 1e-12);
  EXPECT_NEAR(crate.hv_output(2), 101.65, 20.3 * kDacStepVolts);
}

TEST(Amplifier, NoiseHasTheConfiguredSpread) {
  auto cfg = quiet_config();
  cfg.hv_noise_rms = 1e-3;
  Crate crate(cfg);
  crate.schedule({MachineTime::us(2), Channel::hv(1), RelaySet{false}});
  crate.run_until(MachineTime::us(4));
  const double truth = crate.hv_setpoint(1);
  double ss = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) ss += std::pow(crate.hv_output(1) - truth, 2);
  EXPECT_NEAR(std::sqrt(ss / n), 1e-3, 5e-5);
}

TEST(Determinism, SameSeedSameTrace) {
  const auto run = [](std::uint64_t seed) {
    auto cfg = quiet_config(seed);
    cfg.hv_noise_rms = 1e-3;
    Crate crate(cfg);
    std::mt19937_64 rng(seed);
    std::vector<double> reads;
    for (int i = 0; i < 200; ++i) {
      const auto at = crate.earliest() + MachineTime(std::uniform_int_distribution<int>(0, 5000)(rng));
      const auto ch = static_cast<std::uint16_t>(rng() % 8);
      crate.schedule({at, Channel::hv(ch), RelaySet{false}});
      crate.schedule_all(hv_step(at, {ch}, std::uniform_real_distribution<double>(-10, 10)(rng)));
      crate.run_until(at + MachineTime(10));
      reads.push_back(crate.hv_output(ch));
    }
    return std::make_pair(crate.trace(), reads);
  };
  EXPECT_EQ(run(9), run(9));
  EXPECT_NE(run(9).second, run(10).second);
}

TEST(Trace, AtomRoundTrip) {
  Crate crate(quiet_config());
  crate.schedule_all(hv_step(MachineTime::us(3), {0, 1}, 1.0));
  crate.schedule({MachineTime::us(4), Channel::ttl(4), TtlSet{true}});
  crate.run_until(MachineTime::us(10));
  const auto atom = trace_to_atom(crate.trace(), "trace", make_timestamp(1, 0));
  EXPECT_EQ(trace_from_atom(decode_atom(encode_atom(atom))), crate.trace());
}

TEST(Config, JsonRoundTripAndSeedIsMandatory) {
  auto cfg = quiet_config(77);
  cfg.max_update_rate_hz = 1e6;
  cfg.ttl_names["laser_a"] = 8;
  const auto back = config_from_json(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
  auto j = config_to_json(cfg);
  j.erase("seed");
  EXPECT_THROW(config_from_json(j), Error);
}

TEST(Config, RateLimitIsEnforced) {
  auto cfg = quiet_config();
  cfg.max_update_rate_hz = 1000.0;
  Crate crate(cfg);
  crate.schedule_all(hv_step(MachineTime::us(10), {0}, 1.0));
  try {
    crate.schedule_all(hv_step(MachineTime::us(20), {0}, 2.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::rate_exceeded);
  }
  crate.schedule_all(hv_step(MachineTime::ms(2), {0}, 2.0));
}
