#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include <absl/time/civil_time.h>
#include <nlohmann/json.hpp>

#include "gaia/model.hpp"
#include "gaia/sensor.hpp"
#include "gaia/series_store.hpp"
#include "gaia/time.hpp"

namespace gaia::ingest {

struct Reading {
  std::string series_id;  // may be empty: derived from (path, kind, source)
  std::string resource_path;
  SensorKind kind = SensorKind::power_w;
  Instant timestamp;
  double value = 0.0;
  store::Source source = store::Source::iot;
  std::optional<std::string> author;

  friend bool operator==(const Reading&, const Reading&) = default;
};

// Accepts `{series_id?, resource?, kind?, timestamp, value, source?}`.
Reading reading_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Reading& r);

struct Ack {
  std::string series_id;
  std::uint64_t seq = 0;
  // An identical point was already stored; nothing was written.
  bool duplicate = false;
};

struct RowRejection {
  std::size_t line_number = 0;  // 1-based file line, header is line 1
  std::string reason;
};

struct UploadReport {
  std::size_t accepted_count = 0;
  std::vector<RowRejection> rejected;
  std::string series_id;
};

nlohmann::json to_json(const UploadReport& report);

inline constexpr Seconds kFutureTolerance{300};
inline constexpr Seconds kVoteSpacing{3600};

using ReadingListener = std::function<void(const Reading&)>;

// Validates and appends readings. Appends to one series are serialized and
// listeners are called in append order for that series while it is held.
class Ingestion {
 public:
  Ingestion(store::SeriesStore& store, const model::TreeRegistry& tree,
            Clock clock = system_clock());

  void add_listener(ReadingListener listener);

  // Throws ValidationFailed, Unauthorized or UnknownResource. Manual readings
  // require a user allowed to insert readings on the resource.
  Ack ingest_reading(Reading r, const model::User* user);

  // Cumulative register reading stamped at local midnight of `date`.
  Ack ingest_manual_monthly(const std::string& meter_series, absl::CivilDay date,
                            double cumulative_kwh, const model::User& user);

  // CSV `timestamp,value`; each value is the energy of the interval ending at
  // its timestamp. Requires a user allowed to insert building data. Throws
  // Unauthorized, EmptyFile, BadHeader, ValidationFailed (meta).
  UploadReport ingest_file(std::string_view content, store::SeriesMeta meta,
                           const model::User& user);

 private:
  std::mutex& series_lock(const std::string& series_id);
  store::SeriesMeta resolve_series(Reading& r) const;
  void ensure_registered(const store::SeriesMeta& meta);

  store::SeriesStore& store_;
  const model::TreeRegistry& tree_;
  Clock clock_;

  std::mutex listeners_mutex_;
  std::vector<ReadingListener> listeners_;

  std::mutex locks_mutex_;
  std::map<std::string, std::unique_ptr<std::mutex>, std::less<>> series_locks_;

  std::mutex votes_mutex_;
  std::map<std::tuple<std::string, std::string, SensorKind>, std::vector<Instant>> votes_;
};

}  // namespace gaia::ingest
