#include "gaia/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <absl/time/civil_time.h>

#include "gaia/error.hpp"
#include "gaia/numeric.hpp"

namespace gaia::sim {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t draw(std::uint64_t seed, std::uint64_t room, std::int64_t tick,
                   std::uint64_t channel) {
  std::uint64_t state = seed;
  std::uint64_t h = splitmix64(state);
  state = h ^ room;
  h = splitmix64(state);
  state = h ^ static_cast<std::uint64_t>(tick);
  h = splitmix64(state);
  state = h ^ channel;
  return splitmix64(state);
}

double uniform01(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::lights_left_on: return "lights_left_on";
    case ScenarioKind::standby_load: return "standby_load";
    case ScenarioKind::heating_spike: return "heating_spike";
  }
  return "?";
}

std::optional<ScenarioKind> parse_scenario_kind(std::string_view text) {
  for (auto k : {ScenarioKind::lights_left_on, ScenarioKind::standby_load,
                 ScenarioKind::heating_spike}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

void validate(const SimConfig& cfg) {
  if (cfg.building_path.empty()) throw Error(Errc::validation_failed, "sim: building_path missing");
  if (cfg.interval_s <= 0) throw Error(Errc::validation_failed, "sim: interval_s must be > 0");
  if (cfg.prng != "splitmix64") {
    throw Error(Errc::validation_failed, "sim: unsupported prng '" + cfg.prng + "'");
  }
  if (!is_known_zone(cfg.timezone)) {
    throw Error(Errc::validation_failed, "sim: unknown time zone '" + cfg.timezone + "'");
  }
  std::set<std::string> seen;
  for (const auto& r : cfg.rooms) {
    if (!seen.insert(r.path).second) {
      throw Error(Errc::validation_failed, "sim: room '" + r.path + "' listed twice");
    }
    const auto& s = r.schedule;
    if (s.start_hour < 0 || s.start_hour > 24 || s.end_hour < 0 || s.end_hour > 24) {
      throw Error(Errc::validation_failed, "sim: schedule hours must lie within 0-24");
    }
    for (int d : s.weekdays) {
      if (d < 0 || d > 6) throw Error(Errc::validation_failed, "sim: weekday must be 0-6");
    }
    if (r.base_power_w < 0 || r.occupied_extra_w < 0 || r.lighting_w < 0 || r.max_occupancy < 1) {
      throw Error(Errc::validation_failed, "sim: room '" + r.path + "' has a negative load");
    }
  }
}

namespace {

Instant instant_field(const json& j, const char* key) {
  return parse_instant(j.at(key).get<std::string>());
}

}  // namespace

SimConfig sim_config_from_json(const json& j) {
  SimConfig cfg;
  try {
    cfg.building_path = j.at("building_path").get<std::string>();
    cfg.timezone = j.value("timezone", cfg.timezone);
    cfg.interval_s = j.value("interval_s", cfg.interval_s);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.prng = j.value("prng", cfg.prng);
    for (const auto& r : j.at("rooms")) {
      RoomProfile p;
      p.path = r.at("path").get<std::string>();
      p.base_power_w = r.value("base_power_w", p.base_power_w);
      p.occupied_extra_w = r.value("occupied_extra_w", p.occupied_extra_w);
      p.lighting_w = r.value("lighting_w", p.lighting_w);
      p.max_occupancy = r.value("max_occupancy", p.max_occupancy);
      if (r.contains("schedule")) {
        const auto& s = r["schedule"];
        p.schedule.start_hour = s.value("start_hour", p.schedule.start_hour);
        p.schedule.end_hour = s.value("end_hour", p.schedule.end_hour);
        p.schedule.weekdays = s.value("weekdays", p.schedule.weekdays);
      }
      if (r.contains("temperature")) {
        const auto& t = r["temperature"];
        p.temperature.base_c = t.value("base_c", p.temperature.base_c);
        p.temperature.daily_amplitude_c =
            t.value("daily_amplitude_c", p.temperature.daily_amplitude_c);
        p.temperature.occupied_gain_c = t.value("occupied_gain_c", p.temperature.occupied_gain_c);
        p.temperature.noise_c = t.value("noise_c", p.temperature.noise_c);
      }
      cfg.rooms.push_back(std::move(p));
    }
    for (const auto& s : j.value("scenarios", json::array())) {
      const auto kind_text = s.at("kind").get<std::string>();
      auto kind = parse_scenario_kind(kind_text);
      if (!kind) throw Error(Errc::validation_failed, "sim: unknown scenario '" + kind_text + "'");
      cfg = inject(std::move(cfg), Scenario{*kind, s.at("room").get<std::string>(),
                                            instant_field(s, "start"), instant_field(s, "end"),
                                            s.value("magnitude", 0.0)});
    }
  } catch (const json::exception& e) {
    throw Error(Errc::validation_failed, std::string("sim config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

json to_json(const SimConfig& cfg) {
  json rooms = json::array();
  for (const auto& r : cfg.rooms) {
    rooms.push_back(json{
        {"path", r.path},
        {"base_power_w", r.base_power_w},
        {"occupied_extra_w", r.occupied_extra_w},
        {"lighting_w", r.lighting_w},
        {"max_occupancy", r.max_occupancy},
        {"schedule", {{"start_hour", r.schedule.start_hour},
                      {"end_hour", r.schedule.end_hour},
                      {"weekdays", r.schedule.weekdays}}},
        {"temperature", {{"base_c", r.temperature.base_c},
                         {"daily_amplitude_c", r.temperature.daily_amplitude_c},
                         {"occupied_gain_c", r.temperature.occupied_gain_c},
                         {"noise_c", r.temperature.noise_c}}}});
  }
  json scenarios = json::array();
  for (const auto& s : cfg.scenarios) {
    scenarios.push_back(json{{"kind", to_string(s.kind)},
                             {"room", s.room},
                             {"start", format_instant(s.start)},
                             {"end", format_instant(s.end)},
                             {"magnitude", s.magnitude}});
  }
  return json{{"building_path", cfg.building_path}, {"timezone", cfg.timezone},
              {"interval_s", cfg.interval_s},       {"seed", cfg.seed},
              {"prng", cfg.prng},                   {"rooms", rooms},
              {"scenarios", scenarios}};
}

SimConfig inject(SimConfig cfg, const Scenario& scenario) {
  if (!(scenario.start < scenario.end)) {
    throw Error(Errc::validation_failed, "scenario start must precede its end");
  }
  const bool known = std::any_of(cfg.rooms.begin(), cfg.rooms.end(),
                                 [&](const RoomProfile& r) { return r.path == scenario.room; });
  if (!known) throw Error(Errc::unknown_room, "unknown room '" + scenario.room + "'");
  if (scenario.kind == ScenarioKind::heating_spike && !(scenario.magnitude > 0.0)) {
    throw Error(Errc::validation_failed, "heating_spike needs a positive factor");
  }
  if (scenario.kind == ScenarioKind::standby_load && !(scenario.magnitude >= 0.0)) {
    throw Error(Errc::validation_failed, "standby_load needs non-negative watts");
  }
  for (const auto& s : cfg.scenarios) {
    if (s.room == scenario.room && s.kind == scenario.kind && s.start < scenario.end &&
        scenario.start < s.end) {
      throw Error(Errc::overlapping_scenario,
                  std::string(to_string(s.kind)) + " already active on " + s.room + " between " +
                      format_instant(s.start) + " and " + format_instant(s.end));
    }
  }
  cfg.scenarios.push_back(scenario);
  return cfg;
}

namespace {

enum Channel : std::uint64_t { occupancy_ch = 1, activity_ch, temp_a, temp_b, humid_a, humid_b, noise_ch };

double round_to(double v, double step) { return std::round(v / step) * step; }

double gaussian(std::uint64_t seed, std::uint64_t room, std::int64_t tick, std::uint64_t a,
                std::uint64_t b) {
  // Box-Muller; 1 - u keeps the log argument away from zero.
  const double u1 = 1.0 - uniform01(draw(seed, room, tick, a));
  const double u2 = uniform01(draw(seed, room, tick, b));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

const Scenario* active(const SimConfig& cfg, ScenarioKind kind, const std::string& room,
                       Instant t) {
  for (const auto& s : cfg.scenarios) {
    if (s.kind == kind && s.room == room && s.start <= t && t < s.end) return &s;
  }
  return nullptr;
}

ingest::Reading reading(const std::string& path, SensorKind kind, Instant t, double value) {
  ingest::Reading r;
  r.series_id = store::default_series_id(path, kind, store::Source::iot);
  r.resource_path = path;
  r.kind = kind;
  r.timestamp = t;
  r.value = value;
  r.source = store::Source::iot;
  return r;
}

}  // namespace

std::vector<ingest::Reading> simulate(const SimConfig& cfg, Instant t0, Instant t1) {
  if (!(t0 < t1)) throw Error(Errc::bad_range, "simulation start must precede its end");
  validate(cfg);
  const absl::TimeZone tz = load_zone(cfg.timezone);
  const std::int64_t step = cfg.interval_s;
  std::int64_t first = to_unix(t0);
  first += (step - ((first % step) + step) % step) % step;

  std::vector<ingest::Reading> out;
  for (std::int64_t u = first; u < to_unix(t1); u += step) {
    const Instant t = from_unix(u);
    const std::int64_t tick = u / step;
    const absl::CivilSecond local = tz.At(to_absl(t)).cs;
    const int weekday = static_cast<int>(absl::GetWeekday(absl::CivilDay(local)));
    const double hour = local.hour() + local.minute() / 60.0 + local.second() / 3600.0;
    double building_power = 0.0;
    for (std::size_t i = 0; i < cfg.rooms.size(); ++i) {
      const RoomProfile& room = cfg.rooms[i];
      const auto idx = static_cast<std::uint64_t>(i);
      const auto& sched = room.schedule;
      const bool scheduled =
          std::find(sched.weekdays.begin(), sched.weekdays.end(), weekday) != sched.weekdays.end() &&
          local.hour() >= sched.start_hour && local.hour() < sched.end_hour;

      int occupancy = 0;
      int activity = 0;
      if (scheduled) {
        const double fill = 0.6 + 0.4 * uniform01(draw(cfg.seed, idx, tick, occupancy_ch));
        occupancy = std::max(1, static_cast<int>(std::lround(room.max_occupancy * fill)));
        activity = occupancy * (2 + static_cast<int>(6.0 * uniform01(draw(cfg.seed, idx, tick, activity_ch))));
      }
      int light = occupancy > 0 ? 1 : 0;
      if (occupancy == 0 && active(cfg, ScenarioKind::lights_left_on, room.path, t)) light = 1;
      double power = room.base_power_w + (occupancy > 0 ? room.occupied_extra_w : 0.0) +
                     light * room.lighting_w;
      if (occupancy == 0) {
        if (const Scenario* s = active(cfg, ScenarioKind::standby_load, room.path, t)) {
          power += s->magnitude;
        }
      }
      power = std::round(power);
      building_power += power;

      const auto& tm = room.temperature;
      double drift = tm.daily_amplitude_c * std::sin(2.0 * std::numbers::pi * (hour - 9.0) / 24.0) +
                     (occupancy > 0 ? tm.occupied_gain_c : 0.0);
      if (const Scenario* s = active(cfg, ScenarioKind::heating_spike, room.path, t)) {
        drift *= s->magnitude;
      }
      const double temperature =
          std::clamp(round_to(tm.base_c + drift + tm.noise_c * gaussian(cfg.seed, idx, tick, temp_a, temp_b), 0.01),
                     traits(SensorKind::temperature_c).min, traits(SensorKind::temperature_c).max);
      const double humidity = std::clamp(
          round_to(45.0 + (occupancy > 0 ? 5.0 : 0.0) + 2.0 * gaussian(cfg.seed, idx, tick, humid_a, humid_b), 0.1),
          0.0, 100.0);
      const double noise = round_to((occupancy > 0 ? 45.0 : 30.0) +
                                        (occupancy > 0 ? 10.0 : 3.0) *
                                            uniform01(draw(cfg.seed, idx, tick, noise_ch)),
                                    0.1);

      out.push_back(reading(room.path, SensorKind::occupancy_count, t, occupancy));
      out.push_back(reading(room.path, SensorKind::activity_count, t, activity));
      out.push_back(reading(room.path, SensorKind::light_state, t, light));
      out.push_back(reading(room.path, SensorKind::power_w, t, power));
      out.push_back(reading(room.path, SensorKind::temperature_c, t, temperature));
      out.push_back(reading(room.path, SensorKind::humidity_pct, t, humidity));
      out.push_back(reading(room.path, SensorKind::noise_db, t, noise));
    }
    out.push_back(reading(cfg.building_path, SensorKind::power_w, t, building_power));
  }
  return out;
}

std::string to_csv(const std::vector<ingest::Reading>& readings) {
  std::string out = "series_id,timestamp,kind,value\n";
  for (const auto& r : readings) {
    out += r.series_id;
    out += ',';
    out += format_instant(r.timestamp);
    out += ',';
    out += to_string(r.kind);
    out += ',';
    out += format_number(r.value);
    out += '\n';
  }
  return out;
}

}  // namespace gaia::sim
