#include "circus/script/units.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>

#include "circus/error.hpp"

namespace circus::script {

std::string_view to_string(Dimension d) noexcept {
  switch (d) {
    case Dimension::none: return "dimensionless";
    case Dimension::time: return "time";
    case Dimension::voltage: return "voltage";
    case Dimension::frequency: return "frequency";
  }
  return "";
}

namespace {

struct Unit {
  std::string_view symbol;
  double scale;
  Dimension dimension;
};

constexpr std::array kUnits{
    Unit{"ns", 1e-9, Dimension::time},      Unit{"us", 1e-6, Dimension::time},
    Unit{"\xc2\xb5s", 1e-6, Dimension::time}, Unit{"ms", 1e-3, Dimension::time},
    Unit{"s", 1.0, Dimension::time},        Unit{"min", 60.0, Dimension::time},
    Unit{"mV", 1e-3, Dimension::voltage},   Unit{"V", 1.0, Dimension::voltage},
    Unit{"kV", 1e3, Dimension::voltage},    Unit{"Hz", 1.0, Dimension::frequency},
    Unit{"kHz", 1e3, Dimension::frequency}, Unit{"MHz", 1e6, Dimension::frequency},
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::optional<Quantity> try_parse(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  const char* begin = text.data();
  if (*begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, text.data() + text.size(), v);
  if (ec != std::errc() || !std::isfinite(v)) return std::nullopt;
  const auto unit = trim(std::string_view(ptr, static_cast<std::size_t>(text.data() + text.size() - ptr)));
  if (unit.empty()) return Quantity{v, Dimension::none};
  for (const auto& u : kUnits) {
    if (u.symbol == unit) return Quantity{v * u.scale, u.dimension};
  }
  return std::nullopt;
}

}  // namespace

Quantity parse_quantity(std::string_view text) {
  if (auto q = try_parse(text)) return *q;
  fail(Errc::invalid_argument, "cannot parse quantity '" + std::string(text) + "'");
}

bool looks_like_quantity(std::string_view text) {
  auto q = try_parse(text);
  return q && q->dimension != Dimension::none;
}

double as_si(const nlohmann::json& value, Dimension expected, std::string_view what) {
  if (value.is_number()) return value.get<double>();
  if (value.is_string()) {
    const auto q = parse_quantity(value.get<std::string>());
    if (q.dimension != expected && q.dimension != Dimension::none) {
      fail(Errc::invalid_argument, std::string(what) + ": expected " + std::string(to_string(expected)) + ", got " +
                                       std::string(to_string(q.dimension)));
    }
    return q.value;
  }
  fail(Errc::invalid_argument, std::string(what) + ": expected a " + std::string(to_string(expected)));
}

rtio::MachineTime as_duration(const nlohmann::json& value, std::string_view what) {
  return rtio::MachineTime::from_seconds(as_si(value, Dimension::time, what));
}

double as_volts(const nlohmann::json& value, std::string_view what) { return as_si(value, Dimension::voltage, what); }

double as_hertz(const nlohmann::json& value, std::string_view what) {
  return as_si(value, Dimension::frequency, what);
}

}  // namespace circus::script
