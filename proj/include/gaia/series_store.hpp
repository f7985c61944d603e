#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include <absl/time/time.h>
#include <nlohmann/json.hpp>

#include "gaia/sensor.hpp"
#include "gaia/time.hpp"

namespace gaia::store {

enum class Source { iot, manual, file };

std::string_view to_string(Source source);
std::optional<Source> parse_source(std::string_view text);

struct SeriesMeta {
  std::string series_id;
  std::string resource_path;
  SensorKind kind = SensorKind::power_w;
  std::string unit;
  // Set for interval data (uploads): each value covers the interval ending at
  // its timestamp.
  std::optional<std::int64_t> nominal_interval_s;
  Source source = Source::iot;
  // Meter-register readings (monotone totals) rather than per-interval values.
  bool cumulative = false;

  friend bool operator==(const SeriesMeta&, const SeriesMeta&) = default;
};

// `site.building.floor.room:kind:source`; names never contain '.' or ':'.
std::string default_series_id(std::string_view resource_path, SensorKind kind,
                              Source source);
std::optional<SeriesMeta> parse_default_series_id(std::string_view series_id);

void to_json(nlohmann::json& j, const SeriesMeta& meta);
void from_json(const nlohmann::json& j, SeriesMeta& meta);

struct Point {
  Instant timestamp;
  double value = 0.0;
  std::uint64_t seq = 0;

  friend bool operator==(const Point&, const Point&) = default;
};

enum class Timescale { daily, weekly, monthly, yearly };
enum class Agg { sum, mean, min, max, count };

std::string_view to_string(Timescale scale);
std::optional<Timescale> parse_timescale(std::string_view text);
std::string_view to_string(Agg agg);
std::optional<Agg> parse_agg(std::string_view text);

// sum for additive kinds (energy, fuel), mean for levels.
Agg default_agg(SensorKind kind);

struct AggregateBucket {
  Instant bucket_start;
  Timescale timescale = Timescale::daily;
  Agg agg = Agg::sum;
  double value = 0.0;
  std::size_t sample_count = 0;
};

// Calendar bucket containing `t` in zone `tz` (weeks start on Monday), and
// the start of the following bucket.
Instant bucket_floor(Instant t, Timescale scale, const absl::TimeZone& tz);
Instant bucket_next(Instant bucket_start, Timescale scale, const absl::TimeZone& tz);

struct Summary {
  double sum = 0.0;
  std::size_t count = 0;
  double min = 0.0;
  double max = 0.0;
};

struct AppendResult {
  std::uint64_t seq = 0;
  // false when an identical (timestamp, value) was already stored.
  bool written = true;
  bool replaced = false;
};

struct StoreOptions {
  // fdatasync after every record; otherwise each record is a single write(2)
  // and survives a process crash but not a power loss.
  bool sync = false;
};

// Append-only time-series storage: one log file per series plus a catalog,
// with a sorted in-memory index. A default-constructed store is memory-only.
class SeriesStore {
 public:
  SeriesStore();
  ~SeriesStore();
  SeriesStore(const SeriesStore&) = delete;
  SeriesStore& operator=(const SeriesStore&) = delete;

  // Throws Error{store_corrupt} when a log cannot be replayed.
  static std::unique_ptr<SeriesStore> open(const std::filesystem::path& dir,
                                           StoreOptions options = {});

  // Idempotent for an identical meta. A series id bound to a different
  // (path, kind, source) or a second id for the same triple is rejected.
  void register_series(const SeriesMeta& meta);
  std::optional<SeriesMeta> series(std::string_view series_id) const;
  std::optional<SeriesMeta> find_series(std::string_view resource_path,
                                        SensorKind kind, Source source) const;
  std::vector<SeriesMeta> list_series() const;

  // Same timestamp overwrites (last write wins) under a fresh sequence number.
  AppendResult append(std::string_view series_id, Instant timestamp, double value);
  AppendResult append(std::string_view series_id, const Point& point) {
    return append(series_id, point.timestamp, point.value);
  }

  std::optional<Point> latest(std::string_view series_id) const;
  // Half-open [t0, t1), timestamp-sorted. Throws UnknownSeries, BadRange.
  std::vector<Point> query_range(std::string_view series_id, Instant t0,
                                 Instant t1) const;
  // Last point at or before `t`, if any.
  std::optional<Point> at_or_before(std::string_view series_id, Instant t) const;
  std::vector<Point> all_points(std::string_view series_id) const;
  std::size_t point_count(std::string_view series_id) const;

  // Calendar buckets over [t0, t1) in `tz`; empty buckets are omitted.
  // Interval series are attributed to the interval they measure, i.e. a
  // value stamped 00:00 with a 900 s interval belongs to the previous day.
  std::vector<AggregateBucket> aggregate(std::string_view series_id,
                                         Timescale scale, Agg agg, Instant t0,
                                         Instant t1,
                                         const absl::TimeZone& tz) const;

  // Totals over [t0, t1) using the same attribution as aggregate().
  Summary summarize(std::string_view series_id, Instant t0, Instant t1) const;

  const std::filesystem::path& directory() const { return dir_; }
  bool persistent() const { return !dir_.empty(); }

 private:
  struct Series;

  Series& get(std::string_view series_id) const;
  void write_catalog_entry(const Series& s);
  void replay(Series& s);

  std::filesystem::path dir_;
  StoreOptions options_;
  int catalog_fd_ = -1;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::unique_ptr<Series>, std::less<>> series_;
  std::map<std::string, std::string> by_triple_;
  std::size_t next_file_ = 1;
};

// Append-only JSON document collections (rules, notification log, scores),
// persisted as one line-delimited log per collection.
class DocStore {
 public:
  DocStore();
  ~DocStore();
  DocStore(const DocStore&) = delete;
  DocStore& operator=(const DocStore&) = delete;

  static std::unique_ptr<DocStore> open(const std::filesystem::path& dir,
                                        StoreOptions options = {});

  void put(const std::string& collection, const std::string& id,
           const nlohmann::json& doc);
  // Returns false when the id was absent.
  bool remove(const std::string& collection, const std::string& id);
  std::optional<nlohmann::json> get(const std::string& collection,
                                    const std::string& id) const;
  // Documents in first-insertion order.
  std::vector<std::pair<std::string, nlohmann::json>> list(
      const std::string& collection) const;
  std::size_t size(const std::string& collection) const;

 private:
  struct Collection;
  Collection& collection(const std::string& name);
  void append_record(Collection& c, const nlohmann::json& record);

  std::filesystem::path dir_;
  StoreOptions options_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::unique_ptr<Collection>> collections_;
};

}  // namespace gaia::store
