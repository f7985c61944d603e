#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaia/ingestion.hpp"
#include "gaia/time.hpp"

namespace gaia::sim {

// splitmix64 step: advances `state` and returns the next output.
std::uint64_t splitmix64(std::uint64_t& state);

// Stateless draw keyed by (seed, room, tick, channel); the same key always
// yields the same value, whatever order the ticks are generated in.
std::uint64_t draw(std::uint64_t seed, std::uint64_t room, std::int64_t tick,
                   std::uint64_t channel);
double uniform01(std::uint64_t bits);  // [0, 1)

struct Schedule {
  int start_hour = 8;
  int end_hour = 16;
  // Monday = 0 ... Sunday = 6
  std::vector<int> weekdays{0, 1, 2, 3, 4};
};

struct TemperatureModel {
  double base_c = 20.0;
  double daily_amplitude_c = 1.5;
  double occupied_gain_c = 1.5;
  double noise_c = 0.2;
};

// Synthetic classroom defaults; real load profiles differ per school.
struct RoomProfile {
  std::string path;
  double base_power_w = 60.0;
  double occupied_extra_w = 400.0;
  double lighting_w = 300.0;
  Schedule schedule;
  TemperatureModel temperature;
  int max_occupancy = 25;
};

enum class ScenarioKind { lights_left_on, standby_load, heating_spike };
std::string_view to_string(ScenarioKind kind);
std::optional<ScenarioKind> parse_scenario_kind(std::string_view text);

struct Scenario {
  ScenarioKind kind = ScenarioKind::lights_left_on;
  std::string room;  // room path
  Instant start;
  Instant end;
  // Extra watts for standby_load, drift factor for heating_spike.
  double magnitude = 0.0;
};

struct SimConfig {
  std::string building_path;
  std::string timezone = "UTC";
  std::vector<RoomProfile> rooms;
  std::int64_t interval_s = 300;
  std::uint64_t seed = 1;
  std::string prng = "splitmix64";
  std::vector<Scenario> scenarios;
};

void validate(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SimConfig& cfg);

// Throws UnknownRoom, OverlappingScenario (same room and kind, overlapping
// windows) or ValidationFailed.
SimConfig inject(SimConfig cfg, const Scenario& scenario);

// Readings on the epoch-aligned ticks in [t0, t1). Per tick and room:
// occupancy, activity, light, power, temperature, humidity, noise; then the
// building power, which is the sum of the room powers. Throws BadRange.
std::vector<ingest::Reading> simulate(const SimConfig& cfg, Instant t0, Instant t1);

// `series_id,timestamp,kind,value` with a header line.
std::string to_csv(const std::vector<ingest::Reading>& readings);

}  // namespace gaia::sim
