#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "circus/rtio/crate.hpp"
#include "circus/rtio/dac.hpp"

namespace circus::autotune {

inline constexpr std::uint16_t kScanStepCodes = 327;
inline constexpr int kReadingsPerPoint = 5;
/// Acceptable verification error: one DAC LSB at the amplifier output.
inline constexpr double kVerifyToleranceVolts = 6e-3;
inline constexpr double kVerifyRangeVolts = 190.0;
inline constexpr double kExtremeVolts = 200.0;
inline constexpr double kExtremeToleranceVolts = 0.1;

struct ScanPoint {
  std::uint16_t code = 0;
  double set_volts = 0.0;
  std::vector<double> readings;

  double mean() const;
  bool operator==(const ScanPoint&) const = default;
};

struct CalibrationScan {
  std::uint16_t channel = 0;
  std::vector<ScanPoint> points;
  bool operator==(const CalibrationScan&) const = default;
};

struct CalibrationRecord {
  std::uint16_t channel = 0;
  double slope = 20.0;  // output volts per DAC volt
  double offset = 0.0;  // volts
  double residual_rms = 0.0;
  std::string fitted_at;

  /// The uncalibrated assumption: nominal gain, no offset.
  static CalibrationRecord nominal(std::uint16_t channel);
};

/// Codes 0, 327, 654, ... with the final point pinned to full scale.
std::vector<std::uint16_t> scan_codes(std::uint16_t step = kScanStepCodes);

/// Closes the relay, then steps the DAC low to high and records the multimeter
/// (hv_output readout) `readings` times per point.
CalibrationScan calibration_scan(rtio::Crate& crate, std::uint16_t hv, int readings = kReadingsPerPoint,
                                 std::uint16_t step = kScanStepCodes);

/// Ordinary least squares of mean reading against set volts. Throws
/// DegenerateScan (< 2 distinct set points) or InvalidCalibration (slope
/// outside [15, 25] or non-finite residual).
CalibrationRecord fit_calibration(const CalibrationScan& scan);

/// DAC code that produces `desired` output volts; clamps out-of-range requests.
rtio::DacConversion apply_calibration(const CalibrationRecord& rec, double desired_volts);

struct VerificationPoint {
  double desired = 0.0;
  std::uint16_t code = 0;
  double measured = 0.0;
  double diff() const { return measured - desired; }
};

struct ExtremeCheck {
  double requested = 0.0;
  double achieved = 0.0;
  bool clamped = false;
  bool within_tolerance() const;
};

struct VerificationReport {
  std::uint16_t channel = 0;
  std::vector<VerificationPoint> points;
  std::vector<ExtremeCheck> extremes;
  double max_abs_diff = 0.0;
  bool passed = false;  // every |diff| <= 6 mV over +-190 V

  bool extremes_ok() const;
};

/// Quadratically spaced set points over +-190 V (dense near zero), distinct
/// from the calibration scan grid.
std::vector<double> verification_points(int per_side = 48);

/// Applies `rec` at each verification point and compares against the mean
/// of `readings` multimeter reads; also probes the +-200 V extremes.
VerificationReport verify_calibration(rtio::Crate& crate, std::uint16_t hv, const CalibrationRecord& rec,
                                      int readings = kReadingsPerPoint);
/// Throws VerificationFailed carrying the worst point when the report failed.
void require_passed(const VerificationReport& report);

/// Drives one hv channel to `code` (relay closed) and returns the settled time.
rtio::MachineTime set_hv_code(rtio::Crate& crate, std::uint16_t hv, std::uint16_t code);

nlohmann::json scan_to_json(const CalibrationScan& scan);
CalibrationScan scan_from_json(const nlohmann::json& j);
nlohmann::json record_to_json(const CalibrationRecord& rec);
CalibrationRecord record_from_json(const nlohmann::json& j);
nlohmann::json report_to_json(const VerificationReport& report);

/// Simulated board: per-channel gain 20 * (1 + U(-2%, 2%)), offset U(-50, 50) mV.
rtio::CrateConfig perturbed_board(std::uint64_t seed, double noise_rms = 1e-3, std::size_t channels = 8);

}  // namespace circus::autotune
