#include "gaia/time.hpp"

#include <map>
#include <mutex>

#include "gaia/error.hpp"

namespace gaia {

Instant parse_instant(std::string_view text) {
  absl::Time t;
  std::string err;
  // %Ez accepts both 'Z' and +hh:mm.
  if (text.size() < 20 ||
      !absl::ParseTime("%Y-%m-%d%ET%H:%M:%S%Ez", std::string(text), &t, &err)) {
    throw Error(Errc::validation_failed,
                "bad timestamp '" + std::string(text) + "'");
  }
  return from_absl(t);
}

Instant parse_instant_or_date(std::string_view text, const absl::TimeZone& tz) {
  if (text.size() == 10) {
    absl::CivilDay day;
    if (!absl::ParseCivilTime(std::string(text), &day)) {
      throw Error(Errc::validation_failed,
                  "bad date '" + std::string(text) + "'");
    }
    return local_midnight(day, tz);
  }
  return parse_instant(text);
}

std::string format_instant(Instant t) {
  return absl::FormatTime("%Y-%m-%dT%H:%M:%SZ", to_absl(t), absl::UTCTimeZone());
}

namespace {

std::mutex zone_mutex;
std::map<std::string, absl::TimeZone>& zone_cache() {
  static std::map<std::string, absl::TimeZone> cache;
  return cache;
}

}  // namespace

absl::TimeZone load_zone(const std::string& name) {
  std::lock_guard lock(zone_mutex);
  auto& cache = zone_cache();
  if (auto it = cache.find(name); it != cache.end()) return it->second;
  absl::TimeZone tz;
  if (name.empty() || !absl::LoadTimeZone(name, &tz)) {
    throw Error(Errc::validation_failed, "unknown time zone '" + name + "'");
  }
  cache.emplace(name, tz);
  return tz;
}

bool is_known_zone(const std::string& name) {
  try {
    load_zone(name);
    return true;
  } catch (const Error&) {
    return false;
  }
}

Instant local_midnight(absl::CivilDay day, const absl::TimeZone& tz) {
  return from_absl(absl::FromCivil(day, tz));
}

Instant system_now() {
  return std::chrono::time_point_cast<Seconds>(std::chrono::system_clock::now());
}

Clock system_clock() { return system_now; }

}  // namespace gaia
