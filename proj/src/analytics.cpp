#include "gaia/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <absl/time/civil_time.h>
#include <fmt/format.h>

#include "gaia/error.hpp"
#include "gaia/numeric.hpp"

namespace gaia::analytics {

using nlohmann::json;

Consumption derive_consumption(std::span<const double> cumulative) {
  if (cumulative.size() < 2) {
    throw Error(Errc::too_few_points, "consumption needs at least two meter readings");
  }
  Consumption out;
  for (std::size_t i = 0; i + 1 < cumulative.size(); ++i) {
    const double step = cumulative[i + 1] - cumulative[i];
    if (step < 0.0) {
      out.intervals.push_back(std::nullopt);
      out.resets.push_back(i);
    } else {
      out.intervals.push_back(step);
    }
  }
  return out;
}

std::vector<ConsumptionInterval> derive_consumption(std::span<const store::Point> readings) {
  std::vector<double> values;
  values.reserve(readings.size());
  for (const auto& p : readings) values.push_back(p.value);
  const Consumption c = derive_consumption(values);
  std::vector<ConsumptionInterval> out;
  out.reserve(c.intervals.size());
  for (std::size_t i = 0; i < c.intervals.size(); ++i) {
    out.push_back({readings[i].timestamp, readings[i + 1].timestamp, c.intervals[i]});
  }
  return out;
}

Period parse_period(std::string_view text, const absl::TimeZone& tz) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) {
    throw Error(Errc::validation_failed, "period must look like FROM/TO");
  }
  Period p{parse_instant_or_date(text.substr(0, slash), tz),
           parse_instant_or_date(text.substr(slash + 1), tz)};
  if (p.from >= p.to) throw Error(Errc::bad_range, "period start must precede its end");
  return p;
}

Period shift_years(const Period& p, int years, const absl::TimeZone& tz) {
  auto shift = [&](Instant t) {
    const auto cs = tz.At(to_absl(t)).cs;
    const absl::CivilSecond moved(cs.year() + years, cs.month(), cs.day(), cs.hour(),
                                  cs.minute(), cs.second());
    return from_absl(tz.At(moved).pre);
  };
  return Period{shift(p.from), shift(p.to)};
}

json to_json(const ComparisonResult& r) {
  json j{{"subject", r.subject},
         {"baseline", r.baseline},
         {"metric", r.metric},
         {"subject_value", r.subject_value},
         {"baseline_value", r.baseline_value},
         {"delta_pct", r.delta_pct ? json(*r.delta_pct) : json(nullptr)},
         {"comments", r.comments}};
  return j;
}

std::optional<double> delta_pct(double subject, double baseline) {
  if (baseline == 0.0) return std::nullopt;
  return 100.0 * (subject - baseline) / baseline;
}

std::string describe_change(std::optional<double> delta, const std::string& baseline) {
  if (!delta) return "no relative change: the value for " + baseline + " is zero";
  const std::string magnitude = fmt::format("{:.1f}", std::abs(*delta));
  if (magnitude == "0.0") return "about the same as " + baseline;
  return magnitude + "% " + (*delta < 0 ? "less" : "more") + " than " + baseline;
}

namespace {

std::vector<store::SeriesMeta> building_series(const store::SeriesStore& store,
                                               const model::ResourceTree& tree,
                                               const model::ResourceNode& building,
                                               SensorKind kind) {
  std::vector<store::SeriesMeta> out;
  for (const auto& meta : store.list_series()) {
    if (meta.kind != kind) continue;
    const model::ResourceNode* node = tree.try_resolve(meta.resource_path);
    if (!node) continue;
    const bool own = node->id == building.id;
    const bool meter = node->kind == model::NodeKind::meter && node->parent &&
                       *node->parent == building.id;
    if (own || meter) out.push_back(meta);
  }
  return out;
}

const model::ResourceNode& require_building(const model::ResourceTree& tree,
                                            const std::string& id) {
  const model::ResourceNode* node = tree.find(id);
  if (!node || node->kind != model::NodeKind::building) {
    throw Error(Errc::not_found, "unknown building '" + id + "'");
  }
  return *node;
}

std::string describe_period(const Period& p, const absl::TimeZone& tz) {
  auto day = [&](Instant t) {
    return absl::FormatTime("%Y-%m-%d", to_absl(t), tz);
  };
  return "the period " + day(p.from) + " to " + day(p.to);
}

}  // namespace

std::optional<double> building_value(const store::SeriesStore& store,
                                     const model::ResourceTree& tree,
                                     const model::ResourceNode& building, SensorKind kind,
                                     const Period& period) {
  const bool additive = traits(kind).additive;
  ExactSum total;
  std::size_t count = 0;
  for (const auto& meta : building_series(store, tree, building, kind)) {
    if (meta.cumulative) {
      const auto points = store.all_points(meta.series_id);
      if (points.size() < 2) continue;
      for (const auto& iv : derive_consumption(points)) {
        if (iv.kwh && iv.start >= period.from && iv.end <= period.to) {
          total.add(*iv.kwh);
          ++count;
        }
      }
      continue;
    }
    const store::Summary s = store.summarize(meta.series_id, period.from, period.to);
    total.add(s.sum);
    count += s.count;
  }
  if (count == 0) return std::nullopt;
  return additive ? total.value() : total.value() / static_cast<double>(count);
}

ComparisonResult compare_periods(const store::SeriesStore& store,
                                 const model::ResourceTree& tree,
                                 const std::string& building_id, SensorKind kind,
                                 const Period& period, const Period& baseline) {
  const model::ResourceNode& building = require_building(tree, building_id);
  const absl::TimeZone tz = load_zone(model::timezone_of(tree, building));
  const auto subject_value = building_value(store, tree, building, kind, period);
  if (!subject_value) throw Error(Errc::no_data, "no data for " + building_id + " in the period");
  const auto baseline_value = building_value(store, tree, building, kind, baseline);
  if (!baseline_value) {
    throw Error(Errc::no_data, "no data for " + building_id + " in the baseline period");
  }
  ComparisonResult r;
  r.subject = building_id;
  r.baseline = shift_years(period, -1, tz) == baseline ? "the same period last year"
                                                       : describe_period(baseline, tz);
  r.metric = std::string(to_string(kind));
  r.subject_value = *subject_value;
  r.baseline_value = *baseline_value;
  r.delta_pct = delta_pct(r.subject_value, r.baseline_value);
  r.comments = describe_change(r.delta_pct, r.baseline);
  return r;
}

std::vector<std::string> peer_group(const model::ResourceTree& tree,
                                    const std::string& building_id) {
  const model::ResourceNode& subject = require_building(tree, building_id);
  std::vector<std::string> peers;
  if (!subject.meta) return peers;
  const double surface = subject.meta->surface_m2;
  for (const model::ResourceNode* b : tree.buildings()) {
    if (b->id == subject.id || !b->meta) continue;
    if (b->meta->building_type != subject.meta->building_type) continue;
    if (std::abs(b->meta->surface_m2 - surface) <= kPeerSurfaceBand * surface) {
      peers.push_back(b->id);
    }
  }
  std::sort(peers.begin(), peers.end());
  return peers;
}

double energy_intensity(const model::ResourceTree& tree, const std::string& building_id,
                        double total_kwh) {
  const model::ResourceNode& b = require_building(tree, building_id);
  if (!b.meta || !(b.meta->surface_m2 > 0.0)) {
    throw Error(Errc::missing_metadata, "building '" + building_id + "' has no surface area");
  }
  return total_kwh / b.meta->surface_m2;
}

ComparisonResult compare_with_peers(const store::SeriesStore& store,
                                    const model::ResourceTree& tree,
                                    const std::string& building_id, const Period& period) {
  const model::ResourceNode& subject = require_building(tree, building_id);
  const auto own = building_value(store, tree, subject, SensorKind::energy_kwh, period);
  if (!own) throw Error(Errc::no_data, "no energy data for " + building_id + " in the period");
  const double own_intensity = energy_intensity(tree, building_id, *own);

  ExactSum peer_total;
  std::size_t peers_with_data = 0;
  for (const auto& peer_id : peer_group(tree, building_id)) {
    const auto v = building_value(store, tree, tree.at(peer_id), SensorKind::energy_kwh, period);
    if (!v) continue;
    peer_total.add(energy_intensity(tree, peer_id, *v));
    ++peers_with_data;
  }
  if (peers_with_data == 0) {
    throw Error(Errc::no_data, "no similar building has energy data for the period");
  }
  ComparisonResult r;
  r.subject = building_id;
  r.baseline = fmt::format("the average of {} similar building{}", peers_with_data,
                           peers_with_data == 1 ? "" : "s");
  r.metric = "energy_intensity_kwh_m2";
  r.subject_value = own_intensity;
  r.baseline_value = peer_total.value() / static_cast<double>(peers_with_data);
  r.delta_pct = delta_pct(r.subject_value, r.baseline_value);
  r.comments = describe_change(r.delta_pct, r.baseline);
  return r;
}

std::string_view to_string(Direction d) { return d == Direction::high ? "high" : "low"; }

json to_json(const Anomaly& a) {
  return json{{"series_id", a.series_id},
              {"timestamp", format_instant(a.timestamp)},
              {"observed", a.observed},
              {"expected", a.expected},
              {"score", std::isfinite(a.score) ? json(a.score) : json(nullptr)},
              {"direction", to_string(a.direction)}};
}

int hour_of_week(Instant t, const absl::TimeZone& tz) {
  const absl::CivilSecond cs = tz.At(to_absl(t)).cs;
  const int weekday = static_cast<int>(absl::GetWeekday(absl::CivilDay(cs)));  // Monday = 0
  return weekday * 24 + cs.hour();
}

std::vector<Anomaly> detect_anomalies(const std::string& series_id,
                                      std::span<const store::Point> points, Instant from,
                                      Instant to, const AnomalyParams& params,
                                      const absl::TimeZone& tz) {
  if (from >= to) throw Error(Errc::bad_range, "anomaly window start must precede its end");
  if (params.baseline_weeks < 1 || !(params.threshold > 0.0)) {
    throw Error(Errc::validation_failed, "baseline_weeks must be >= 1 and threshold > 0");
  }
  const Seconds span{static_cast<std::int64_t>(params.baseline_weeks) * 7 * 86400};
  if (points.empty() || points.front().timestamp > from - span) {
    throw Error(Errc::insufficient_history,
                fmt::format("need {} weeks of history before {}", params.baseline_weeks,
                            format_instant(from)));
  }
  std::vector<int> slots;
  slots.reserve(points.size());
  for (const auto& p : points) slots.push_back(hour_of_week(p.timestamp, tz));

  std::vector<Anomaly> out;
  std::vector<double> baseline;
  std::vector<double> deviations;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const store::Point& p = points[i];
    if (p.timestamp < from || p.timestamp >= to) continue;
    baseline.clear();
    const Instant start = p.timestamp - span;
    auto it = std::lower_bound(points.begin(), points.end(), start,
                               [](const store::Point& q, Instant t) { return q.timestamp < t; });
    for (auto j = static_cast<std::size_t>(it - points.begin()); j < i; ++j) {
      if (slots[j] == slots[i] && points[j].timestamp + Seconds{3600} <= p.timestamp) {
        baseline.push_back(points[j].value);
      }
    }
    if (baseline.empty()) continue;
    const double expected = median(baseline);
    deviations.clear();
    for (double v : baseline) deviations.push_back(std::abs(v - expected));
    const double scale = kMadScale * median(deviations);
    const double dev = p.value - expected;
    double score = 0.0;
    bool flagged = false;
    if (scale > 0.0) {
      score = dev / scale;
      flagged = std::abs(score) >= params.threshold;
    } else if (std::abs(dev) > params.abs_floor) {
      score = dev > 0 ? std::numeric_limits<double>::infinity()
                      : -std::numeric_limits<double>::infinity();
      flagged = true;
    }
    if (flagged) {
      out.push_back(Anomaly{series_id, p.timestamp, p.value, expected, score,
                            dev > 0 ? Direction::high : Direction::low});
    }
  }
  return out;
}

}  // namespace gaia::analytics
