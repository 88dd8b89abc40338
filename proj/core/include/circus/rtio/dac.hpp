#pragma once

#include <cstdint>

namespace circus::rtio {

inline constexpr double kDacMinVolts = -10.0;
inline constexpr double kDacMaxVolts = 10.0;
inline constexpr std::uint16_t kDacMaxCode = 65535;
/// One LSB of the 16-bit offset-binary converter.
inline constexpr double kDacStepVolts = (kDacMaxVolts - kDacMinVolts) / kDacMaxCode;

struct DacConversion {
  std::uint16_t code = 0;
  bool clamped = false;  // request was outside [-10, +10] V and saturated
};

/// code = round((v + 10) / step); out-of-range requests saturate.
DacConversion dac_code(double volts);
double dac_volts(std::uint16_t code);

}  // namespace circus::rtio
