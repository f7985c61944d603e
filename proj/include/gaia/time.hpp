#pragma once

#include <chrono>
#include <atomic>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

#include <absl/time/civil_time.h>
#include <absl/time/time.h>

namespace gaia {

// All instants are UTC with second precision.
using Instant = std::chrono::sys_seconds;
using Seconds = std::chrono::seconds;

inline Instant from_unix(std::int64_t s) { return Instant{Seconds{s}}; }
inline std::int64_t to_unix(Instant t) { return t.time_since_epoch().count(); }

inline absl::Time to_absl(Instant t) { return absl::FromUnixSeconds(to_unix(t)); }
inline Instant from_absl(absl::Time t) { return from_unix(absl::ToUnixSeconds(t)); }

// Strict `YYYY-MM-DDTHH:MM:SSZ` (numeric offsets are accepted and normalized).
// Throws Error{validation_failed}.
Instant parse_instant(std::string_view text);

// Accepts a full instant or a bare `YYYY-MM-DD` date, read as local midnight in
// `tz`.
Instant parse_instant_or_date(std::string_view text, const absl::TimeZone& tz);

std::string format_instant(Instant t);

// Cached lookup of IANA zones from the system zoneinfo database. Throws
// Error{validation_failed} for unknown names.
absl::TimeZone load_zone(const std::string& name);
bool is_known_zone(const std::string& name);

Instant local_midnight(absl::CivilDay day, const absl::TimeZone& tz);

using Clock = std::function<Instant()>;

Instant system_now();
Clock system_clock();

// Externally driven clock for replays and tests.
class ManualClock {
 public:
  explicit ManualClock(Instant start = Instant{}) : now_(to_unix(start)) {}

  Instant now() const { return from_unix(now_.load()); }
  void set(Instant t) { now_.store(to_unix(t)); }
  void advance(Seconds d) { now_.fetch_add(d.count()); }
  Clock clock() const {
    return [this] { return now(); };
  }

 private:
  std::atomic<std::int64_t> now_;
};

}  // namespace gaia
