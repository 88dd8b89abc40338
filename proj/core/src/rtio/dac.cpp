#include "circus/rtio/dac.hpp"

#include <cmath>

namespace circus::rtio {

DacConversion dac_code(double volts) {
  if (!(volts >= kDacMinVolts)) return {0, true};
  if (volts > kDacMaxVolts) return {kDacMaxCode, true};
  auto code = std::lround((volts - kDacMinVolts) / kDacStepVolts);
  if (code > kDacMaxCode) code = kDacMaxCode;
  return {static_cast<std::uint16_t>(code), false};
}

double dac_volts(std::uint16_t code) { return kDacMinVolts + code * kDacStepVolts; }

}  // namespace circus::rtio
