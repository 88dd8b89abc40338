#include "circus/autotune/stabilizer.hpp"

#include <algorithm>
#include <cmath>

#include "circus/autotune/pulse_timing.hpp"
#include "circus/error.hpp"

namespace circus::autotune {

using rtio::Channel;
using rtio::MachineTime;
using rtio::TimelineEvent;
using rtio::TtlSet;

void DriftModel::validate() const {
  if (walk_sigma_ns < 0.0 || jump_ns < 0.0 || within_cycle_fraction < 0.0 || within_cycle_fraction > 1.0 ||
      jump_probability < 0.0 || jump_probability > 1.0) {
    fail(Errc::invalid_argument, "drift model parameters must be non-negative (probabilities <= 1)");
  }
}

DriftProcess::DriftProcess(const DriftModel& model) : model_(model), rng_(model.seed) { model_.validate(); }

namespace {

double gauss(std::mt19937_64& rng, double sigma) {
  if (!(sigma > 0.0)) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

}  // namespace

double DriftProcess::next_cycle() {
  drift_ += gauss(rng_, model_.walk_sigma_ns * std::sqrt(1.0 - model_.within_cycle_fraction));
  if (model_.jump_probability > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < model_.jump_probability) {
    const bool up = std::bernoulli_distribution(0.5)(rng_);
    drift_ += up ? model_.jump_ns : -model_.jump_ns;
  }
  return drift_;
}

double DriftProcess::within_cycle() {
  drift_ += gauss(rng_, model_.walk_sigma_ns * std::sqrt(model_.within_cycle_fraction));
  return drift_;
}

Waveform photodiode_trace(const PhotodiodeModel& pd, double window_start_ns, double emission_ns,
                          std::mt19937_64* noise_rng) {
  const auto n = static_cast<std::size_t>(std::llround(pd.window_ns / pd.sample_dt_ns));
  Waveform w;
  w.t0 = window_start_ns * 1e-9;
  w.dt = pd.sample_dt_ns * 1e-9;
  w.samples.resize(n);
  const double rise_start = emission_ns - 0.5 * pd.rise_ns;
  const double fall_start = emission_ns + 0.5 * pd.rise_ns + pd.plateau_ns;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = window_start_ns + static_cast<double>(i) * pd.sample_dt_ns;
    double v = std::clamp((t - rise_start) / pd.rise_ns, 0.0, 1.0);
    if (t > fall_start) v = std::clamp(1.0 - (t - fall_start) / pd.rise_ns, 0.0, 1.0);
    w.samples[i] = pd.amplitude * v;
    if (noise_rng) w.samples[i] += gauss(*noise_rng, pd.noise_rms);
  }
  return w;
}

namespace {

struct Shot {
  std::int64_t trigger_ns;
  double emitted;
  double measured;
};

Shot fire(rtio::Crate& crate, const StabilizerConfig& cfg, std::int64_t trigger_ns, double drift,
          std::mt19937_64& noise_rng) {
  const auto slot = crate.now() + cfg.pulse_spacing;
  const auto trig = slot + MachineTime(trigger_ns);
  const auto ttl = Channel::ttl(cfg.pockels_ttl);
  crate.schedule_all({TimelineEvent{trig, ttl, TtlSet{true}},
                      TimelineEvent{trig + cfg.trigger_width, ttl, TtlSet{false}}});
  const auto delta = crate.run_until(trig + cfg.trigger_width);
  const auto edges = delta.rising_edges(ttl.name());
  if (edges.empty()) fail(Errc::no_pulse, "Pockels trigger missing from the trace");

  Shot shot;
  shot.trigger_ns = (edges.front() - slot).mu();
  shot.emitted = static_cast<double>(shot.trigger_ns) + cfg.laser_latency_ns + drift;
  const double window_start =
      static_cast<double>(shot.trigger_ns) + cfg.laser_latency_ns - cfg.photodiode.window_before_ns;
  const auto trace = photodiode_trace(cfg.photodiode, window_start, shot.emitted,
                                      cfg.photodiode.noise_rms > 0.0 ? &noise_rng : nullptr);
  shot.measured = extract_pulse_time(trace);
  return shot;
}

}  // namespace

std::vector<PulseTiming> stabilize_cycle(rtio::Crate& crate, const StabilizerConfig& cfg,
                                         const DriftModel& drift, std::uint32_t cycles,
                                         const std::function<double(std::uint32_t)>& target_at) {
  DriftProcess process(drift);
  std::mt19937_64 noise_rng(cfg.noise_seed);
  std::vector<PulseTiming> out;
  out.reserve(2 * static_cast<std::size_t>(cycles));

  for (std::uint32_t c = 0; c < cycles; ++c) {
    const double target = target_at(c);

    const double d_test = process.next_cycle();
    const auto test = fire(crate, cfg, cfg.nominal_delay_ns, d_test, noise_rng);
    out.push_back({c, PulseKind::test, test.measured, target, 0.0, test.trigger_ns, d_test, test.emitted});

    const double correction = target - test.measured;
    const auto trigger = cfg.nominal_delay_ns + std::llround(correction);
    const double d_desired = process.within_cycle();
    const auto desired = fire(crate, cfg, trigger, d_desired, noise_rng);
    out.push_back({c, PulseKind::desired, desired.measured, target, correction, desired.trigger_ns, d_desired,
                   desired.emitted});
  }
  return out;
}

std::vector<PulseTiming> stabilize_cycle(rtio::Crate& crate, const StabilizerConfig& cfg,
                                         const DriftModel& drift, std::uint32_t cycles, double target_ns) {
  return stabilize_cycle(crate, cfg, drift, cycles, [target_ns](std::uint32_t) { return target_ns; });
}

StabilizerSummary summarize(const std::vector<PulseTiming>& timings) {
  double ss_desired = 0.0, ss_test = 0.0;
  std::size_t n_desired = 0, n_test = 0;
  for (const auto& p : timings) {
    const double d = p.measured - p.target;
    if (p.kind == PulseKind::desired) {
      ss_desired += d * d;
      ++n_desired;
    } else {
      ss_test += d * d;
      ++n_test;
    }
  }
  StabilizerSummary s;
  if (n_desired) s.desired_residual_rms = std::sqrt(ss_desired / static_cast<double>(n_desired));
  if (n_test) s.test_deviation_rms = std::sqrt(ss_test / static_cast<double>(n_test));
  return s;
}

rtio::CrateConfig stabilizer_crate_config(std::uint64_t seed) {
  rtio::CrateConfig cfg;
  cfg.seed = seed;
  cfg.ttl_names["pockels"] = 4;
  return cfg;
}

}  // namespace circus::autotune
