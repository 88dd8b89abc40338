#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "circus/rtio/types.hpp"

namespace circus::script {

enum class Dimension { none, time, voltage, frequency };
std::string_view to_string(Dimension d) noexcept;

/// A value converted to SI (seconds, volts, hertz).
struct Quantity {
  double value = 0.0;
  Dimension dimension = Dimension::none;
};

/// Parses "10 us", "1.5ms", "20 V", "4 Hz", "-3 kV". A bare number is
/// dimensionless. Throws InvalidArgument.
Quantity parse_quantity(std::string_view text);
/// True when `text` is a number followed by a known unit.
bool looks_like_quantity(std::string_view text);

/// Accepts a string with the right unit or a bare number already in SI.
double as_si(const nlohmann::json& value, Dimension expected, std::string_view what);
rtio::MachineTime as_duration(const nlohmann::json& value, std::string_view what);
double as_volts(const nlohmann::json& value, std::string_view what);
double as_hertz(const nlohmann::json& value, std::string_view what);

}  // namespace circus::script
