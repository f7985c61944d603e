#include "gaia/ingestion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <set>

#include <spdlog/spdlog.h>

#include "gaia/error.hpp"

namespace gaia::ingest {

using nlohmann::json;

Reading reading_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::validation_failed, "reading must be a JSON object");
  Reading r;
  try {
    r.series_id = j.value("series_id", std::string{});
    r.resource_path = j.value("resource", j.value("resource_path", std::string{}));
    if (j.contains("kind")) {
      const auto text = j["kind"].get<std::string>();
      auto kind = parse_sensor_kind(text);
      if (!kind) throw Error(Errc::validation_failed, "unknown sensor kind '" + text + "'");
      r.kind = *kind;
    } else if (auto parsed = store::parse_default_series_id(r.series_id)) {
      r.kind = parsed->kind;
    } else {
      throw Error(Errc::validation_failed, "reading needs a kind");
    }
    r.timestamp = parse_instant(j.at("timestamp").get<std::string>());
    if (!j.at("value").is_number()) throw Error(Errc::validation_failed, "value must be a number");
    r.value = j["value"].get<double>();
    const auto source = j.value("source", std::string("iot"));
    auto parsed_source = store::parse_source(source);
    if (!parsed_source) throw Error(Errc::validation_failed, "unknown source '" + source + "'");
    r.source = *parsed_source;
    if (j.contains("author") && j["author"].is_string()) r.author = j["author"].get<std::string>();
  } catch (const json::exception& e) {
    throw Error(Errc::validation_failed, std::string("bad reading: ") + e.what());
  }
  return r;
}

json to_json(const Reading& r) {
  json j{{"series_id", r.series_id},
         {"resource", r.resource_path},
         {"kind", to_string(r.kind)},
         {"timestamp", format_instant(r.timestamp)},
         {"value", r.value},
         {"source", store::to_string(r.source)}};
  if (r.author) j["author"] = *r.author;
  return j;
}

json to_json(const UploadReport& report) {
  json rejected = json::array();
  for (const auto& r : report.rejected) {
    rejected.push_back(json{{"line", r.line_number}, {"reason", r.reason}});
  }
  return json{{"series_id", report.series_id},
              {"accepted_count", report.accepted_count},
              {"rejected", rejected}};
}

Ingestion::Ingestion(store::SeriesStore& store, const model::TreeRegistry& tree, Clock clock)
    : store_(store), tree_(tree), clock_(std::move(clock)) {}

void Ingestion::add_listener(ReadingListener listener) {
  std::lock_guard lock(listeners_mutex_);
  listeners_.push_back(std::move(listener));
}

std::mutex& Ingestion::series_lock(const std::string& series_id) {
  std::lock_guard lock(locks_mutex_);
  auto& slot = series_locks_[series_id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

store::SeriesMeta Ingestion::resolve_series(Reading& r) const {
  store::SeriesMeta meta;
  if (!r.series_id.empty()) {
    if (auto known = store_.series(r.series_id)) {
      meta = *known;
    } else if (!r.resource_path.empty()) {
      meta.series_id = r.series_id;
      meta.resource_path = r.resource_path;
      meta.kind = r.kind;
      meta.source = r.source;
    } else if (auto parsed = store::parse_default_series_id(r.series_id)) {
      meta = *parsed;
    } else {
      throw Error(Errc::validation_failed,
                  "series '" + r.series_id + "' is not registered and the reading names no resource");
    }
    const bool mismatch = (!r.resource_path.empty() && r.resource_path != meta.resource_path) ||
                          r.kind != meta.kind || r.source != meta.source;
    if (mismatch) {
      throw Error(Errc::validation_failed,
                  "reading does not match series '" + r.series_id + "' (" + meta.resource_path +
                      " " + std::string(to_string(meta.kind)) + " " +
                      std::string(store::to_string(meta.source)) + ")");
    }
  } else {
    if (r.resource_path.empty()) {
      throw Error(Errc::validation_failed, "reading needs a series_id or a resource");
    }
    if (auto known = store_.find_series(r.resource_path, r.kind, r.source)) {
      meta = *known;
    } else {
      meta.series_id = store::default_series_id(r.resource_path, r.kind, r.source);
      meta.resource_path = r.resource_path;
      meta.kind = r.kind;
      meta.source = r.source;
    }
  }
  if (meta.unit.empty()) meta.unit = std::string(traits(meta.kind).unit);
  r.series_id = meta.series_id;
  r.resource_path = meta.resource_path;
  return meta;
}

void Ingestion::ensure_registered(const store::SeriesMeta& meta) {
  if (!store_.series(meta.series_id)) store_.register_series(meta);
}

Ack Ingestion::ingest_reading(Reading r, const model::User* user) {
  if (r.source == store::Source::file) {
    throw Error(Errc::validation_failed, "file readings must arrive through an upload");
  }
  const store::SeriesMeta meta = resolve_series(r);
  if (meta.cumulative) {
    throw Error(Errc::validation_failed,
                "series '" + meta.series_id + "' holds cumulative meter readings");
  }
  const auto tree = tree_.snapshot();
  const model::ResourceNode* node = tree->try_resolve(r.resource_path);
  if (!node) throw Error(Errc::unknown_resource, "unknown resource '" + r.resource_path + "'");

  if (!value_in_range(r.kind, r.value)) {
    const auto& t = traits(r.kind);
    throw Error(Errc::validation_failed,
                "value " + std::to_string(r.value) + " outside the valid range of " +
                    std::string(t.name) + (t.integral ? " (integers " : " (") +
                    std::to_string(t.min) + " to " + std::to_string(t.max) + ")");
  }
  const Instant now = clock_();
  if (r.timestamp > now + kFutureTolerance) {
    throw Error(Errc::validation_failed,
                "timestamp " + format_instant(r.timestamp) + " is in the future");
  }
  if (r.source == store::Source::manual) {
    if (!user || !model::authorize(*user, model::Action::insert_reading, *tree, *node)) {
      throw Error(Errc::unauthorized, "not allowed to enter readings for " + r.resource_path);
    }
    r.author = user->id;
  }

  std::optional<std::tuple<std::string, std::string, SensorKind>> vote_key;
  if (r.source == store::Source::manual && is_comfort_vote(r.kind)) {
    vote_key.emplace(user->id, r.resource_path, r.kind);
    std::lock_guard lock(votes_mutex_);
    for (Instant prior : votes_[*vote_key]) {
      const auto gap = r.timestamp > prior ? r.timestamp - prior : prior - r.timestamp;
      if (gap < kVoteSpacing) {
        throw Error(Errc::validation_failed,
                    "comfort vote already recorded for " + r.resource_path + " within the hour");
      }
    }
  }

  ensure_registered(meta);
  std::lock_guard lock(series_lock(meta.series_id));
  const store::AppendResult res = store_.append(meta.series_id, r.timestamp, r.value);
  if (vote_key) {
    std::lock_guard votes(votes_mutex_);
    votes_[*vote_key].push_back(r.timestamp);
  }
  if (res.written) {
    std::vector<ReadingListener> listeners;
    {
      std::lock_guard l(listeners_mutex_);
      listeners = listeners_;
    }
    for (const auto& fn : listeners) fn(r);
  }
  return Ack{meta.series_id, res.seq, !res.written};
}

Ack Ingestion::ingest_manual_monthly(const std::string& meter_series, absl::CivilDay date,
                                     double cumulative_kwh, const model::User& user) {
  store::SeriesMeta meta;
  if (auto known = store_.series(meter_series)) {
    meta = *known;
  } else if (auto parsed = store::parse_default_series_id(meter_series)) {
    meta = *parsed;
    meta.cumulative = true;
  } else {
    throw Error(Errc::unknown_series, "unknown meter series '" + meter_series + "'");
  }
  if (!meta.cumulative || meta.kind != SensorKind::energy_kwh) {
    throw Error(Errc::validation_failed,
                "series '" + meter_series + "' is not a cumulative energy meter");
  }
  const auto tree = tree_.snapshot();
  const model::ResourceNode* node = tree->try_resolve(meta.resource_path);
  if (!node) throw Error(Errc::unknown_resource, "unknown resource '" + meta.resource_path + "'");
  if (!model::authorize(user, model::Action::insert_reading, *tree, *node)) {
    throw Error(Errc::unauthorized, "not allowed to enter readings for " + meta.resource_path);
  }
  if (!std::isfinite(cumulative_kwh) || cumulative_kwh < 0.0) {
    throw Error(Errc::validation_failed, "cumulative_kwh must be a non-negative number");
  }
  const Instant at = local_midnight(date, load_zone(model::timezone_of(*tree, *node)));
  if (at > clock_() + kFutureTolerance) {
    throw Error(Errc::validation_failed, "reading date lies in the future");
  }
  ensure_registered(meta);
  std::lock_guard lock(series_lock(meta.series_id));
  const auto res = store_.append(meta.series_id, at, cumulative_kwh);
  return Ack{meta.series_id, res.seq, !res.written};
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

bool blank(std::string_view s) { return trim(s).empty(); }

}  // namespace

UploadReport Ingestion::ingest_file(std::string_view content, store::SeriesMeta meta,
                                    const model::User& user) {
  if (!meta.nominal_interval_s ||
      (*meta.nominal_interval_s != 900 && *meta.nominal_interval_s != 3600)) {
    throw Error(Errc::validation_failed, "upload interval must be 900 or 3600 seconds");
  }
  meta.source = store::Source::file;
  meta.cumulative = false;
  if (meta.unit.empty()) meta.unit = std::string(traits(meta.kind).unit);
  if (meta.series_id.empty()) {
    meta.series_id = store::default_series_id(meta.resource_path, meta.kind, meta.source);
  }
  const auto tree = tree_.snapshot();
  const model::ResourceNode* node = tree->try_resolve(meta.resource_path);
  if (!node) throw Error(Errc::unknown_resource, "unknown resource '" + meta.resource_path + "'");
  if (!model::authorize(user, model::Action::insert_building_data, *tree, *node)) {
    throw Error(Errc::unauthorized, "only the building manager may upload building data");
  }
  if (auto known = store_.series(meta.series_id)) {
    if (known->nominal_interval_s != meta.nominal_interval_s) {
      throw Error(Errc::validation_failed,
                  "series '" + meta.series_id + "' was registered with another interval");
    }
  }

  if (content.starts_with("\xEF\xBB\xBF")) content.remove_prefix(3);
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start <= content.size();) {
    const auto nl = content.find('\n', start);
    const auto end = nl == std::string_view::npos ? content.size() : nl;
    lines.push_back(content.substr(start, end - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  std::size_t data_rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) data_rows += blank(lines[i]) ? 0 : 1;
  if (lines.empty() || blank(lines[0])) {
    if (data_rows == 0) throw Error(Errc::empty_file, "upload is empty");
    throw Error(Errc::bad_header, "first line must be the header 'timestamp,value'");
  }
  const std::string_view header = trim(lines[0]);
  const auto comma = header.find(',');
  if (comma == std::string_view::npos || trim(header.substr(0, comma)) != "timestamp" ||
      trim(header.substr(comma + 1)) != "value") {
    throw Error(Errc::bad_header, "expected header 'timestamp,value', got '" +
                                      std::string(header) + "'");
  }
  if (data_rows == 0) throw Error(Errc::empty_file, "upload has a header but no rows");

  UploadReport report;
  report.series_id = meta.series_id;
  const Instant now = clock_();
  const std::int64_t interval = *meta.nominal_interval_s;
  std::vector<std::pair<Instant, double>> accepted;
  std::set<Instant> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string_view row = trim(lines[i]);
    if (row.empty()) continue;
    const std::size_t line_no = i + 1;
    auto reject = [&](std::string reason) {
      report.rejected.push_back(RowRejection{line_no, std::move(reason)});
    };
    const auto sep = row.find(',');
    if (sep == std::string_view::npos || row.find(',', sep + 1) != std::string_view::npos) {
      reject("malformed row");
      continue;
    }
    Instant ts;
    try {
      ts = parse_instant(trim(row.substr(0, sep)));
    } catch (const Error&) {
      reject("bad timestamp");
      continue;
    }
    const std::string_view value_text = trim(row.substr(sep + 1));
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(value_text.data(), value_text.data() + value_text.size(), value);
    if (ec != std::errc{} || ptr != value_text.data() + value_text.size() || value_text.empty()) {
      reject("bad value");
      continue;
    }
    if (!value_in_range(meta.kind, value)) {
      reject("value out of range");
      continue;
    }
    if (to_unix(ts) % interval != 0) {
      reject("off-grid timestamp");
      continue;
    }
    if (ts > now + kFutureTolerance) {
      reject("future timestamp");
      continue;
    }
    if (!seen.insert(ts).second) {
      reject("duplicate timestamp");
      continue;
    }
    accepted.emplace_back(ts, value);
  }

  ensure_registered(meta);
  std::lock_guard lock(series_lock(meta.series_id));
  for (const auto& [ts, value] : accepted) store_.append(meta.series_id, ts, value);
  report.accepted_count = accepted.size();
  spdlog::info("upload to {}: {} accepted, {} rejected", meta.series_id, report.accepted_count,
               report.rejected.size());
  return report;
}

}  // namespace gaia::ingest
