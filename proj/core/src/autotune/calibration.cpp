#include "circus/autotune/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "circus/atom.hpp"
#include "circus/error.hpp"

namespace circus::autotune {

using nlohmann::json;
using rtio::Channel;
using rtio::DacUpdate;
using rtio::DacWord;
using rtio::MachineTime;
using rtio::RelaySet;
using rtio::TimelineEvent;

double ScanPoint::mean() const {
  if (readings.empty()) return 0.0;
  double s = 0.0;
  for (double r : readings) s += r;
  return s / static_cast<double>(readings.size());
}

CalibrationRecord CalibrationRecord::nominal(std::uint16_t channel) {
  CalibrationRecord r;
  r.channel = channel;
  return r;
}

std::vector<std::uint16_t> scan_codes(std::uint16_t step) {
  if (step == 0) fail(Errc::invalid_argument, "scan step must be positive");
  std::vector<std::uint16_t> codes;
  for (std::uint32_t c = 0; c <= rtio::kDacMaxCode; c += step) codes.push_back(static_cast<std::uint16_t>(c));
  if (codes.back() != rtio::kDacMaxCode) codes.back() = rtio::kDacMaxCode;
  return codes;
}

MachineTime set_hv_code(rtio::Crate& crate, std::uint16_t hv, std::uint16_t code) {
  const auto t = crate.earliest();
  const auto card = Channel::fastino(static_cast<std::uint16_t>(hv / 32));
  const auto local = static_cast<std::uint8_t>(hv % 32);
  std::vector<TimelineEvent> events{{t, card, DacWord{local, code}}, {t, card, DacUpdate{1u << local}}};
  if (crate.relay_open(hv)) events.push_back({t, Channel::hv(hv), RelaySet{false}});
  crate.schedule_all(events);
  crate.run_until(t);
  return t;
}

namespace {

double read_mean(rtio::Crate& crate, std::uint16_t hv, int readings) {
  double s = 0.0;
  for (int i = 0; i < readings; ++i) s += crate.hv_output(hv);
  return s / readings;
}

}  // namespace

CalibrationScan calibration_scan(rtio::Crate& crate, std::uint16_t hv, int readings, std::uint16_t step) {
  if (readings < 1) fail(Errc::invalid_argument, "at least one reading per point");
  CalibrationScan scan;
  scan.channel = hv;
  for (auto code : scan_codes(step)) {
    set_hv_code(crate, hv, code);
    ScanPoint p{code, rtio::dac_volts(code), {}};
    for (int i = 0; i < readings; ++i) p.readings.push_back(crate.hv_output(hv));
    scan.points.push_back(std::move(p));
  }
  return scan;
}

CalibrationRecord fit_calibration(const CalibrationScan& scan) {
  std::set<double> distinct;
  for (const auto& p : scan.points) {
    if (!p.readings.empty()) distinct.insert(p.set_volts);
  }
  if (distinct.size() < 2) fail(Errc::degenerate_scan, "need at least two distinct set points");

  double n = 0.0, sx = 0.0, sy = 0.0;
  for (const auto& p : scan.points) {
    if (p.readings.empty()) continue;
    n += 1.0;
    sx += p.set_volts;
    sy += p.mean();
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : scan.points) {
    if (p.readings.empty()) continue;
    sxx += (p.set_volts - mx) * (p.set_volts - mx);
    sxy += (p.set_volts - mx) * (p.mean() - my);
  }

  CalibrationRecord rec;
  rec.channel = scan.channel;
  rec.slope = sxy / sxx;
  rec.offset = my - rec.slope * mx;
  double ss = 0.0;
  for (const auto& p : scan.points) {
    if (p.readings.empty()) continue;
    const double r = p.mean() - (rec.slope * p.set_volts + rec.offset);
    ss += r * r;
  }
  rec.residual_rms = std::sqrt(ss / n);
  rec.fitted_at = timestamp_now().display;

  if (!(rec.slope >= 15.0 && rec.slope <= 25.0)) {
    fail(Errc::invalid_calibration, "fitted slope " + std::to_string(rec.slope) + " outside [15, 25]");
  }
  if (!std::isfinite(rec.offset) || !std::isfinite(rec.residual_rms)) {
    fail(Errc::invalid_calibration, "non-finite fit");
  }
  return rec;
}

rtio::DacConversion apply_calibration(const CalibrationRecord& rec, double desired_volts) {
  return rtio::dac_code((desired_volts - rec.offset) / rec.slope);
}

bool ExtremeCheck::within_tolerance() const {
  return std::abs(achieved - requested) <= kExtremeToleranceVolts;
}

bool VerificationReport::extremes_ok() const {
  return std::all_of(extremes.begin(), extremes.end(), [](const ExtremeCheck& e) { return e.within_tolerance(); });
}

std::vector<double> verification_points(int per_side) {
  std::vector<double> pts;
  for (int k = per_side; k >= 1; --k) {
    const double f = static_cast<double>(k) / per_side;
    pts.push_back(-kVerifyRangeVolts * f * f);
  }
  pts.push_back(0.0);
  for (int k = 1; k <= per_side; ++k) {
    const double f = static_cast<double>(k) / per_side;
    pts.push_back(kVerifyRangeVolts * f * f);
  }
  return pts;
}

VerificationReport verify_calibration(rtio::Crate& crate, std::uint16_t hv, const CalibrationRecord& rec,
                                      int readings) {
  VerificationReport report;
  report.channel = hv;
  for (double desired : verification_points()) {
    const auto conv = apply_calibration(rec, desired);
    set_hv_code(crate, hv, conv.code);
    VerificationPoint p{desired, conv.code, read_mean(crate, hv, readings)};
    report.max_abs_diff = std::max(report.max_abs_diff, std::abs(p.diff()));
    report.points.push_back(p);
  }
  for (double requested : {-kExtremeVolts, kExtremeVolts}) {
    const auto conv = apply_calibration(rec, requested);
    set_hv_code(crate, hv, conv.code);
    report.extremes.push_back({requested, read_mean(crate, hv, readings), conv.clamped});
  }
  report.passed = report.max_abs_diff <= kVerifyToleranceVolts;
  return report;
}

void require_passed(const VerificationReport& report) {
  if (report.passed) return;
  const auto worst = std::max_element(report.points.begin(), report.points.end(),
                                      [](const auto& a, const auto& b) { return std::abs(a.diff()) < std::abs(b.diff()); });
  std::string msg = "hv" + std::to_string(report.channel) + " max |diff| " + std::to_string(report.max_abs_diff) + " V";
  if (worst != report.points.end()) msg += " at " + std::to_string(worst->desired) + " V";
  fail(Errc::verification_failed, msg);
}

json scan_to_json(const CalibrationScan& scan) {
  json pts = json::array();
  for (const auto& p : scan.points) {
    pts.push_back({{"code", p.code}, {"set_volts", p.set_volts}, {"readings", p.readings}});
  }
  return {{"channel", scan.channel}, {"points", pts}};
}

CalibrationScan scan_from_json(const json& j) {
  try {
    CalibrationScan scan;
    scan.channel = j.at("channel").get<std::uint16_t>();
    for (const auto& p : j.at("points")) {
      scan.points.push_back({p.at("code").get<std::uint16_t>(), p.at("set_volts").get<double>(),
                             p.at("readings").get<std::vector<double>>()});
    }
    return scan;
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("scan document: ") + e.what());
  }
}

json record_to_json(const CalibrationRecord& rec) {
  return {{"channel", rec.channel},
          {"slope", rec.slope},
          {"offset", rec.offset},
          {"residual_rms", rec.residual_rms},
          {"fitted_at", rec.fitted_at}};
}

CalibrationRecord record_from_json(const json& j) {
  try {
    CalibrationRecord rec;
    rec.channel = j.at("channel").get<std::uint16_t>();
    rec.slope = j.at("slope").get<double>();
    rec.offset = j.at("offset").get<double>();
    rec.residual_rms = j.at("residual_rms").get<double>();
    rec.fitted_at = j.value("fitted_at", "");
    return rec;
  } catch (const json::exception& e) {
    fail(Errc::schema_violation, std::string("calibration document: ") + e.what());
  }
}

json report_to_json(const VerificationReport& report) {
  json pts = json::array();
  for (const auto& p : report.points) {
    pts.push_back({{"desired", p.desired}, {"code", p.code}, {"measured", p.measured}, {"diff", p.diff()}});
  }
  json ext = json::array();
  for (const auto& e : report.extremes) {
    ext.push_back({{"requested", e.requested},
                   {"achieved", e.achieved},
                   {"clamped", e.clamped},
                   {"within_tolerance", e.within_tolerance()}});
  }
  return {{"channel", report.channel}, {"points", pts},          {"extremes", ext},
          {"max_abs_diff", report.max_abs_diff}, {"passed", report.passed}};
}

rtio::CrateConfig perturbed_board(std::uint64_t seed, double noise_rms, std::size_t channels) {
  rtio::CrateConfig cfg;
  cfg.seed = seed;
  cfg.hv_noise_rms = noise_rms;
  cfg.hv_channels.assign(channels, {});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> gain(-0.02, 0.02);
  std::uniform_real_distribution<double> offset(-0.05, 0.05);
  for (auto& ch : cfg.hv_channels) {
    ch.gain = 20.0 * (1.0 + gain(rng));
    ch.offset = offset(rng);
  }
  return cfg;
}

}  // namespace circus::autotune
