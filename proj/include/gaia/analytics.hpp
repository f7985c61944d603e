#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <absl/time/time.h>
#include <nlohmann/json.hpp>

#include "gaia/model.hpp"
#include "gaia/sensor.hpp"
#include "gaia/series_store.hpp"
#include "gaia/time.hpp"

namespace gaia::analytics {

// Consumption between consecutive register readings. A negative step is a
// meter reset: its interval has no value.
struct Consumption {
  std::vector<std::optional<double>> intervals;
  std::vector<std::size_t> resets;  // indices into `intervals`
};

// Throws TooFewPoints below two readings.
Consumption derive_consumption(std::span<const double> cumulative);

struct ConsumptionInterval {
  Instant start;
  Instant end;
  std::optional<double> kwh;
};

std::vector<ConsumptionInterval> derive_consumption(std::span<const store::Point> readings);

// Half-open [from, to).
struct Period {
  Instant from;
  Instant to;

  friend bool operator==(const Period&, const Period&) = default;
};

// "2017-01-01/2017-02-01" with dates as local midnights or full instants.
Period parse_period(std::string_view text, const absl::TimeZone& tz);
Period shift_years(const Period& p, int years, const absl::TimeZone& tz);

struct ComparisonResult {
  std::string subject;  // building id
  std::string baseline;  // descriptor of the baseline period or peer set
  std::string metric;
  double subject_value = 0.0;
  double baseline_value = 0.0;
  // Unset when the baseline is zero.
  std::optional<double> delta_pct;
  std::string comments;
};

nlohmann::json to_json(const ComparisonResult& r);

std::optional<double> delta_pct(double subject, double baseline);
std::string describe_change(std::optional<double> delta_pct, const std::string& baseline);

// Building-level value of `kind` over a period: series attached to the
// building node or to meters hanging directly under it. Additive kinds are
// totals, cumulative meters contribute the intervals lying inside the period,
// other kinds are sample means. Returns nullopt when nothing falls inside.
std::optional<double> building_value(const store::SeriesStore& store,
                                     const model::ResourceTree& tree,
                                     const model::ResourceNode& building,
                                     SensorKind kind, const Period& period);

// Throws NotFound (building), NoData (either period empty).
ComparisonResult compare_periods(const store::SeriesStore& store,
                                 const model::ResourceTree& tree,
                                 const std::string& building_id, SensorKind kind,
                                 const Period& period, const Period& baseline);

// Same building_type and surface within 25% of the subject's surface. The
// band is relative to the subject, so the relation is not symmetric.
inline constexpr double kPeerSurfaceBand = 0.25;
std::vector<std::string> peer_group(const model::ResourceTree& tree,
                                    const std::string& building_id);

// Throws MissingMetadata when the building has no surface.
double energy_intensity(const model::ResourceTree& tree, const std::string& building_id,
                        double total_kwh);

// Subject intensity against the mean intensity of peers with data.
// Throws NoData when the subject or every peer lacks data.
ComparisonResult compare_with_peers(const store::SeriesStore& store,
                                    const model::ResourceTree& tree,
                                    const std::string& building_id, const Period& period);

enum class Direction { high, low };
std::string_view to_string(Direction d);

struct Anomaly {
  std::string series_id;
  Instant timestamp;
  double observed = 0.0;
  double expected = 0.0;
  // Robust z-score; infinite when the baseline has no spread.
  double score = 0.0;
  Direction direction = Direction::high;
};

nlohmann::json to_json(const Anomaly& a);

struct AnomalyParams {
  int baseline_weeks = 4;
  double threshold = 3.0;
  // With zero spread only deviations above this are flagged.
  double abs_floor = 1e-9;
};

inline constexpr double kMadScale = 1.4826;

// Hour-of-week slot (Monday 00:00 local = 0) of `t`.
int hour_of_week(Instant t, const absl::TimeZone& tz);

// Flags points in [from, to) against the same local hour-of-week over the
// preceding baseline weeks. Throws InsufficientHistory.
std::vector<Anomaly> detect_anomalies(const std::string& series_id,
                                      std::span<const store::Point> points, Instant from,
                                      Instant to, const AnomalyParams& params,
                                      const absl::TimeZone& tz);

}  // namespace gaia::analytics
