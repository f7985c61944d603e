#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace gaia {

enum class SensorKind {
  power_w,
  energy_kwh,
  temperature_c,
  humidity_pct,
  noise_db,
  activity_count,
  luminosity_lux,
  light_state,
  occupancy_count,
  comfort_thermal,
  comfort_luminosity,
  fuel_consumption_l,
};

inline constexpr std::array kAllSensorKinds = {
    SensorKind::power_w,         SensorKind::energy_kwh,
    SensorKind::temperature_c,   SensorKind::humidity_pct,
    SensorKind::noise_db,        SensorKind::activity_count,
    SensorKind::luminosity_lux,  SensorKind::light_state,
    SensorKind::occupancy_count, SensorKind::comfort_thermal,
    SensorKind::comfort_luminosity, SensorKind::fuel_consumption_l,
};

struct KindTraits {
  std::string_view name;
  std::string_view unit;
  double min;
  double max;
  bool integral;
  // Quantities consumed over an interval aggregate by sum, levels by mean.
  bool additive;
};

const KindTraits& traits(SensorKind kind);

std::string_view to_string(SensorKind kind);
std::optional<SensorKind> parse_sensor_kind(std::string_view name);

// Range and integrality check for a single value; NaN and infinities fail.
bool value_in_range(SensorKind kind, double value);

inline bool is_comfort_vote(SensorKind kind) {
  return kind == SensorKind::comfort_thermal ||
         kind == SensorKind::comfort_luminosity;
}

}  // namespace gaia
