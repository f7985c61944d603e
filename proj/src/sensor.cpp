#include "gaia/sensor.hpp"

#include <cmath>
#include <limits>

namespace gaia {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Indexed by SensorKind.
constexpr std::array<KindTraits, 12> kTraits = {{
    {"power_w", "W", 0.0, 1e7, false, false},
    {"energy_kwh", "kWh", 0.0, kInf, false, true},
    {"temperature_c", "degC", -60.0, 80.0, false, false},
    {"humidity_pct", "%", 0.0, 100.0, false, false},
    {"noise_db", "dB", 0.0, 194.0, false, false},
    {"activity_count", "events", 0.0, 1e6, true, false},
    {"luminosity_lux", "lx", 0.0, 200000.0, false, false},
    {"light_state", "bool", 0.0, 1.0, true, false},
    {"occupancy_count", "persons", 0.0, 10000.0, true, false},
    {"comfort_thermal", "vote", 1.0, 5.0, true, false},
    {"comfort_luminosity", "vote", 1.0, 5.0, true, false},
    {"fuel_consumption_l", "l", 0.0, kInf, false, true},
}};

}  // namespace

const KindTraits& traits(SensorKind kind) {
  return kTraits[static_cast<std::size_t>(kind)];
}

std::string_view to_string(SensorKind kind) { return traits(kind).name; }

std::optional<SensorKind> parse_sensor_kind(std::string_view name) {
  for (SensorKind k : kAllSensorKinds) {
    if (traits(k).name == name) return k;
  }
  return std::nullopt;
}

bool value_in_range(SensorKind kind, double value) {
  if (!std::isfinite(value)) return false;
  const KindTraits& t = traits(kind);
  if (value < t.min || value > t.max) return false;
  if (t.integral && std::floor(value) != value) return false;
  return true;
}

}  // namespace gaia
