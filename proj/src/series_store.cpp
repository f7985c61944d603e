#include "gaia/series_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "gaia/error.hpp"
#include "gaia/numeric.hpp"

namespace gaia::store {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Source source) {
  switch (source) {
    case Source::iot: return "iot";
    case Source::manual: return "manual";
    case Source::file: return "file";
  }
  return "?";
}

std::optional<Source> parse_source(std::string_view text) {
  for (Source s : {Source::iot, Source::manual, Source::file}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

std::string default_series_id(std::string_view resource_path, SensorKind kind,
                              Source source) {
  std::string id(resource_path);
  std::replace(id.begin(), id.end(), '/', '.');
  id += ':';
  id += gaia::to_string(kind);
  id += ':';
  id += to_string(source);
  return id;
}

std::optional<SeriesMeta> parse_default_series_id(std::string_view series_id) {
  const auto c1 = series_id.find(':');
  if (c1 == std::string_view::npos || c1 == 0) return std::nullopt;
  const auto c2 = series_id.find(':', c1 + 1);
  if (c2 == std::string_view::npos) return std::nullopt;
  auto kind = parse_sensor_kind(series_id.substr(c1 + 1, c2 - c1 - 1));
  auto source = parse_source(series_id.substr(c2 + 1));
  if (!kind || !source) return std::nullopt;
  SeriesMeta meta;
  meta.series_id = std::string(series_id);
  meta.resource_path = std::string(series_id.substr(0, c1));
  std::replace(meta.resource_path.begin(), meta.resource_path.end(), '.', '/');
  meta.kind = *kind;
  meta.unit = std::string(traits(*kind).unit);
  meta.source = *source;
  return meta;
}

void to_json(json& j, const SeriesMeta& meta) {
  j = json{{"series_id", meta.series_id},
           {"resource_path", meta.resource_path},
           {"kind", gaia::to_string(meta.kind)},
           {"unit", meta.unit},
           {"source", to_string(meta.source)},
           {"cumulative", meta.cumulative}};
  if (meta.nominal_interval_s) j["nominal_interval_s"] = *meta.nominal_interval_s;
}

void from_json(const json& j, SeriesMeta& meta) {
  meta.series_id = j.at("series_id").get<std::string>();
  meta.resource_path = j.at("resource_path").get<std::string>();
  const auto kind_text = j.at("kind").get<std::string>();
  auto kind = parse_sensor_kind(kind_text);
  if (!kind) throw Error(Errc::unknown_kind, "unknown sensor kind '" + kind_text + "'");
  meta.kind = *kind;
  meta.unit = j.value("unit", std::string(traits(*kind).unit));
  const auto source_text = j.value("source", std::string("iot"));
  auto source = parse_source(source_text);
  if (!source) throw Error(Errc::validation_failed, "unknown source '" + source_text + "'");
  meta.source = *source;
  meta.cumulative = j.value("cumulative", false);
  meta.nominal_interval_s.reset();
  if (j.contains("nominal_interval_s") && !j["nominal_interval_s"].is_null()) {
    meta.nominal_interval_s = j["nominal_interval_s"].get<std::int64_t>();
  }
}

std::string_view to_string(Timescale scale) {
  switch (scale) {
    case Timescale::daily: return "daily";
    case Timescale::weekly: return "weekly";
    case Timescale::monthly: return "monthly";
    case Timescale::yearly: return "yearly";
  }
  return "?";
}

std::optional<Timescale> parse_timescale(std::string_view text) {
  for (Timescale s : {Timescale::daily, Timescale::weekly, Timescale::monthly,
                      Timescale::yearly}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

std::string_view to_string(Agg agg) {
  switch (agg) {
    case Agg::sum: return "sum";
    case Agg::mean: return "mean";
    case Agg::min: return "min";
    case Agg::max: return "max";
    case Agg::count: return "count";
  }
  return "?";
}

std::optional<Agg> parse_agg(std::string_view text) {
  for (Agg a : {Agg::sum, Agg::mean, Agg::min, Agg::max, Agg::count}) {
    if (to_string(a) == text) return a;
  }
  return std::nullopt;
}

Agg default_agg(SensorKind kind) {
  return traits(kind).additive ? Agg::sum : Agg::mean;
}

Instant bucket_floor(Instant t, Timescale scale, const absl::TimeZone& tz) {
  const absl::CivilSecond cs = absl::ToCivilSecond(to_absl(t), tz);
  switch (scale) {
    case Timescale::daily:
      return from_absl(absl::FromCivil(absl::CivilDay(cs), tz));
    case Timescale::weekly: {
      absl::CivilDay day(cs);
      // absl::Weekday enumerates Monday first.
      day -= static_cast<int>(absl::GetWeekday(day));
      return from_absl(absl::FromCivil(day, tz));
    }
    case Timescale::monthly:
      return from_absl(absl::FromCivil(absl::CivilMonth(cs), tz));
    case Timescale::yearly:
      return from_absl(absl::FromCivil(absl::CivilYear(cs), tz));
  }
  return t;
}

Instant bucket_next(Instant bucket_start, Timescale scale, const absl::TimeZone& tz) {
  const absl::CivilSecond cs = absl::ToCivilSecond(to_absl(bucket_start), tz);
  switch (scale) {
    case Timescale::daily:
      return from_absl(absl::FromCivil(absl::CivilDay(cs) + 1, tz));
    case Timescale::weekly:
      return from_absl(absl::FromCivil(absl::CivilDay(cs) + 7, tz));
    case Timescale::monthly:
      return from_absl(absl::FromCivil(absl::CivilMonth(cs) + 1, tz));
    case Timescale::yearly:
      return from_absl(absl::FromCivil(absl::CivilYear(cs) + 1, tz));
  }
  return bucket_start;
}

namespace {

void write_all(int fd, std::string_view data, bool sync) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(Errc::io_error, std::string("write failed: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  if (sync && ::fdatasync(fd) != 0) {
    throw Error(Errc::io_error, std::string("fdatasync failed: ") + std::strerror(errno));
  }
}

int open_append(const fs::path& path) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd < 0) {
    throw Error(Errc::io_error, "cannot open " + path.string() + ": " + std::strerror(errno));
  }
  return fd;
}

// Reads complete lines; a torn final line (crash mid-write) is cut off.
std::vector<std::string> read_lines_truncating(const fs::path& path) {
  std::vector<std::string> lines;
  if (!fs::exists(path)) return lines;
  std::ifstream in(path, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t start = 0;
  while (start < content.size()) {
    const auto nl = content.find('\n', start);
    if (nl == std::string::npos) {
      spdlog::warn("dropping torn record at end of {}", path.string());
      fs::resize_file(path, start);
      break;
    }
    lines.emplace_back(content.substr(start, nl - start));
    start = nl + 1;
  }
  return lines;
}

template <typename T>
bool parse_field(std::string_view& rest, T& out) {
  while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), out);
  if (ec != std::errc{}) return false;
  rest.remove_prefix(static_cast<std::size_t>(ptr - rest.data()));
  return true;
}

bool check_range(Instant t0, Instant t1) { return t0 < t1; }

struct Accumulator {
  ExactSum sum;
  std::size_t count = 0;
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();

  void add(double v) {
    sum.add(v);
    ++count;
    min = std::min(min, v);
    max = std::max(max, v);
  }

  double result(Agg agg) const {
    switch (agg) {
      case Agg::sum: return sum.value();
      case Agg::mean: return sum.value() / static_cast<double>(count);
      case Agg::min: return min;
      case Agg::max: return max;
      case Agg::count: return static_cast<double>(count);
    }
    return 0.0;
  }
};

std::int64_t attribution_shift(const SeriesMeta& meta) {
  if (meta.nominal_interval_s && !meta.cumulative) return *meta.nominal_interval_s;
  return 0;
}

}  // namespace

struct SeriesStore::Series {
  SeriesMeta meta;
  std::string file;
  int fd = -1;
  mutable std::shared_mutex mutex;
  std::vector<Point> points;  // sorted by timestamp, unique timestamps
  std::uint64_t next_seq = 1;

  ~Series() {
    if (fd >= 0) ::close(fd);
  }

  std::vector<Point>::iterator lower(Instant t) {
    return std::lower_bound(points.begin(), points.end(), t,
                            [](const Point& p, Instant v) { return p.timestamp < v; });
  }
  std::vector<Point>::const_iterator lower(Instant t) const {
    return std::lower_bound(points.begin(), points.end(), t,
                            [](const Point& p, Instant v) { return p.timestamp < v; });
  }

  // Applies a record in log order; returns false for an identical duplicate.
  void apply(const Point& p) {
    auto it = lower(p.timestamp);
    if (it != points.end() && it->timestamp == p.timestamp) {
      *it = p;
    } else {
      points.insert(it, p);
    }
    next_seq = std::max(next_seq, p.seq + 1);
  }
};

SeriesStore::SeriesStore() = default;

SeriesStore::~SeriesStore() {
  if (catalog_fd_ >= 0) ::close(catalog_fd_);
}

std::unique_ptr<SeriesStore> SeriesStore::open(const fs::path& dir, StoreOptions options) {
  auto store = std::make_unique<SeriesStore>();
  store->dir_ = dir;
  store->options_ = options;
  fs::create_directories(dir);
  const fs::path catalog = dir / "catalog.jsonl";
  for (const auto& line : read_lines_truncating(catalog)) {
    if (line.empty()) continue;
    auto s = std::make_unique<Series>();
    try {
      const json entry = json::parse(line);
      s->meta = entry.at("meta").get<SeriesMeta>();
      s->file = entry.at("file").get<std::string>();
    } catch (const std::exception& e) {
      throw Error(Errc::store_corrupt, "bad catalog entry in " + catalog.string() + ": " + e.what());
    }
    store->replay(*s);
    s->fd = open_append(dir / s->file);
    store->by_triple_[s->meta.resource_path + '\n' + std::string(gaia::to_string(s->meta.kind)) +
                      '\n' + std::string(to_string(s->meta.source))] = s->meta.series_id;
    std::size_t number = 0;
    if (std::sscanf(s->file.c_str(), "series-%zu.log", &number) == 1) {
      store->next_file_ = std::max(store->next_file_, number + 1);
    }
    store->series_.emplace(s->meta.series_id, std::move(s));
  }
  store->catalog_fd_ = open_append(catalog);
  return store;
}

void SeriesStore::replay(Series& s) {
  const fs::path path = dir_ / s.file;
  std::size_t line_no = 0;
  for (const auto& line : read_lines_truncating(path)) {
    ++line_no;
    std::string_view rest(line);
    std::uint64_t seq = 0;
    std::int64_t ts = 0;
    double value = 0.0;
    if (!parse_field(rest, seq) || !parse_field(rest, ts) || !parse_field(rest, value) ||
        !rest.empty()) {
      throw Error(Errc::store_corrupt,
                  path.string() + ":" + std::to_string(line_no) + ": malformed record");
    }
    s.apply(Point{from_unix(ts), value, seq});
  }
}

void SeriesStore::write_catalog_entry(const Series& s) {
  if (catalog_fd_ < 0) return;
  const json entry{{"meta", s.meta}, {"file", s.file}};
  write_all(catalog_fd_, entry.dump() + "\n", options_.sync);
}

void SeriesStore::register_series(const SeriesMeta& meta) {
  if (meta.series_id.empty()) throw Error(Errc::validation_failed, "empty series id");
  const std::string triple = meta.resource_path + '\n' +
                             std::string(gaia::to_string(meta.kind)) + '\n' +
                             std::string(to_string(meta.source));
  std::unique_lock lock(mutex_);
  if (auto it = series_.find(meta.series_id); it != series_.end()) {
    const SeriesMeta& have = it->second->meta;
    if (have.resource_path != meta.resource_path || have.kind != meta.kind ||
        have.source != meta.source) {
      throw Error(Errc::validation_failed,
                  "series '" + meta.series_id + "' is bound to " + have.resource_path + " " +
                      std::string(gaia::to_string(have.kind)) + " (" +
                      std::string(to_string(have.source)) + ")");
    }
    return;
  }
  if (auto it = by_triple_.find(triple); it != by_triple_.end()) {
    throw Error(Errc::validation_failed, "resource " + meta.resource_path + " " +
                                             std::string(gaia::to_string(meta.kind)) +
                                             " already has series '" + it->second + "'");
  }
  auto s = std::make_unique<Series>();
  s->meta = meta;
  if (s->meta.unit.empty()) s->meta.unit = std::string(traits(meta.kind).unit);
  if (persistent()) {
    std::ostringstream name;
    name << "series-" << next_file_++ << ".log";
    s->file = name.str();
    s->fd = open_append(dir_ / s->file);
    write_catalog_entry(*s);
  }
  by_triple_[triple] = meta.series_id;
  series_.emplace(meta.series_id, std::move(s));
}

std::optional<SeriesMeta> SeriesStore::series(std::string_view series_id) const {
  std::shared_lock lock(mutex_);
  auto it = series_.find(series_id);
  if (it == series_.end()) return std::nullopt;
  return it->second->meta;
}

std::optional<SeriesMeta> SeriesStore::find_series(std::string_view resource_path,
                                                   SensorKind kind, Source source) const {
  const std::string triple = std::string(resource_path) + '\n' +
                             std::string(gaia::to_string(kind)) + '\n' +
                             std::string(to_string(source));
  std::shared_lock lock(mutex_);
  auto it = by_triple_.find(triple);
  if (it == by_triple_.end()) return std::nullopt;
  return series_.find(it->second)->second->meta;
}

std::vector<SeriesMeta> SeriesStore::list_series() const {
  std::shared_lock lock(mutex_);
  std::vector<SeriesMeta> out;
  for (const auto& [_, s] : series_) out.push_back(s->meta);
  return out;
}

SeriesStore::Series& SeriesStore::get(std::string_view series_id) const {
  std::shared_lock lock(mutex_);
  auto it = series_.find(series_id);
  if (it == series_.end()) {
    throw Error(Errc::unknown_series, "unknown series '" + std::string(series_id) + "'");
  }
  return *it->second;
}

AppendResult SeriesStore::append(std::string_view series_id, Instant timestamp, double value) {
  Series& s = get(series_id);
  std::unique_lock lock(s.mutex);
  auto it = s.lower(timestamp);
  const bool exists = it != s.points.end() && it->timestamp == timestamp;
  if (exists && it->value == value) {
    return AppendResult{it->seq, false, false};
  }
  const Point p{timestamp, value, s.next_seq};
  if (s.fd >= 0) {
    std::string record = std::to_string(p.seq);
    record += ' ';
    record += std::to_string(to_unix(p.timestamp));
    record += ' ';
    record += format_number(p.value);
    record += '\n';
    write_all(s.fd, record, options_.sync);
  }
  ++s.next_seq;
  if (exists) {
    spdlog::debug("series {}: overwriting point at {}", s.meta.series_id,
                  format_instant(timestamp));
    *it = p;
  } else {
    s.points.insert(it, p);
  }
  return AppendResult{p.seq, true, exists};
}

std::optional<Point> SeriesStore::latest(std::string_view series_id) const {
  const Series& s = get(series_id);
  std::shared_lock lock(s.mutex);
  if (s.points.empty()) return std::nullopt;
  return s.points.back();
}

std::vector<Point> SeriesStore::query_range(std::string_view series_id, Instant t0,
                                            Instant t1) const {
  const Series& s = get(series_id);
  if (!check_range(t0, t1)) {
    throw Error(Errc::bad_range, "range start must precede its end");
  }
  std::shared_lock lock(s.mutex);
  return std::vector<Point>(s.lower(t0), s.lower(t1));
}

std::optional<Point> SeriesStore::at_or_before(std::string_view series_id, Instant t) const {
  const Series& s = get(series_id);
  std::shared_lock lock(s.mutex);
  auto it = s.lower(t + Seconds{1});
  if (it == s.points.begin()) return std::nullopt;
  return *std::prev(it);
}

std::vector<Point> SeriesStore::all_points(std::string_view series_id) const {
  const Series& s = get(series_id);
  std::shared_lock lock(s.mutex);
  return s.points;
}

std::size_t SeriesStore::point_count(std::string_view series_id) const {
  const Series& s = get(series_id);
  std::shared_lock lock(s.mutex);
  return s.points.size();
}

std::vector<AggregateBucket> SeriesStore::aggregate(std::string_view series_id,
                                                    Timescale scale, Agg agg, Instant t0,
                                                    Instant t1,
                                                    const absl::TimeZone& tz) const {
  const Series& s = get(series_id);
  if (!check_range(t0, t1)) {
    throw Error(Errc::bad_range, "range start must precede its end");
  }
  const Seconds shift{attribution_shift(s.meta)};
  std::vector<AggregateBucket> out;
  std::shared_lock lock(s.mutex);
  auto it = s.lower(t0 + shift);
  const auto end = s.lower(t1 + shift);
  Accumulator acc;
  Instant start{};
  Instant next{};
  auto flush = [&] {
    if (acc.count == 0) return;
    out.push_back(AggregateBucket{start, scale, agg, acc.result(agg), acc.count});
    acc = Accumulator{};
  };
  for (; it != end; ++it) {
    const Instant t = it->timestamp - shift;
    if (acc.count == 0 || t >= next) {
      flush();
      start = bucket_floor(t, scale, tz);
      next = bucket_next(start, scale, tz);
    }
    acc.add(it->value);
  }
  flush();
  return out;
}

Summary SeriesStore::summarize(std::string_view series_id, Instant t0, Instant t1) const {
  const Series& s = get(series_id);
  if (!check_range(t0, t1)) {
    throw Error(Errc::bad_range, "range start must precede its end");
  }
  const Seconds shift{attribution_shift(s.meta)};
  std::shared_lock lock(s.mutex);
  Accumulator acc;
  for (auto it = s.lower(t0 + shift), end = s.lower(t1 + shift); it != end; ++it) {
    acc.add(it->value);
  }
  Summary out;
  out.count = acc.count;
  if (acc.count > 0) {
    out.sum = acc.sum.value();
    out.min = acc.min;
    out.max = acc.max;
  }
  return out;
}

// ---------------------------------------------------------------------------

struct DocStore::Collection {
  int fd = -1;
  std::map<std::string, json> docs;
  std::vector<std::string> order;

  ~Collection() {
    if (fd >= 0) ::close(fd);
  }

  void apply_put(const std::string& id, json doc) {
    auto [it, inserted] = docs.insert_or_assign(id, std::move(doc));
    if (inserted) order.push_back(id);
  }
  bool apply_remove(const std::string& id) {
    if (docs.erase(id) == 0) return false;
    order.erase(std::find(order.begin(), order.end(), id));
    return true;
  }
};

DocStore::DocStore() = default;

DocStore::~DocStore() = default;

std::unique_ptr<DocStore> DocStore::open(const fs::path& dir, StoreOptions options) {
  auto store = std::make_unique<DocStore>();
  store->dir_ = dir;
  store->options_ = options;
  fs::create_directories(dir);
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".jsonl") continue;
    auto c = std::make_unique<Collection>();
    std::size_t line_no = 0;
    for (const auto& line : read_lines_truncating(entry.path())) {
      ++line_no;
      try {
        json rec = json::parse(line);
        const auto op = rec.at("op").get<std::string>();
        const auto id = rec.at("id").get<std::string>();
        if (op == "put") {
          c->apply_put(id, std::move(rec.at("doc")));
        } else if (op == "del") {
          c->apply_remove(id);
        } else {
          throw std::runtime_error("unknown op " + op);
        }
      } catch (const std::exception& e) {
        throw Error(Errc::store_corrupt, entry.path().string() + ":" +
                                             std::to_string(line_no) + ": " + e.what());
      }
    }
    c->fd = open_append(entry.path());
    store->collections_.emplace(entry.path().stem().string(), std::move(c));
  }
  return store;
}

DocStore::Collection& DocStore::collection(const std::string& name) {
  auto it = collections_.find(name);
  if (it != collections_.end()) return *it->second;
  auto c = std::make_unique<Collection>();
  if (!dir_.empty()) c->fd = open_append(dir_ / (name + ".jsonl"));
  return *collections_.emplace(name, std::move(c)).first->second;
}

void DocStore::append_record(Collection& c, const json& record) {
  if (c.fd >= 0) write_all(c.fd, record.dump() + "\n", options_.sync);
}

void DocStore::put(const std::string& collection_name, const std::string& id,
                   const json& doc) {
  std::unique_lock lock(mutex_);
  Collection& c = collection(collection_name);
  append_record(c, json{{"op", "put"}, {"id", id}, {"doc", doc}});
  c.apply_put(id, doc);
}

bool DocStore::remove(const std::string& collection_name, const std::string& id) {
  std::unique_lock lock(mutex_);
  Collection& c = collection(collection_name);
  if (!c.docs.contains(id)) return false;
  append_record(c, json{{"op", "del"}, {"id", id}});
  return c.apply_remove(id);
}

std::optional<json> DocStore::get(const std::string& collection_name,
                                  const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = collections_.find(collection_name);
  if (it == collections_.end()) return std::nullopt;
  auto doc = it->second->docs.find(id);
  if (doc == it->second->docs.end()) return std::nullopt;
  return doc->second;
}

std::vector<std::pair<std::string, json>> DocStore::list(
    const std::string& collection_name) const {
  std::shared_lock lock(mutex_);
  std::vector<std::pair<std::string, json>> out;
  auto it = collections_.find(collection_name);
  if (it == collections_.end()) return out;
  for (const auto& id : it->second->order) out.emplace_back(id, it->second->docs.at(id));
  return out;
}

std::size_t DocStore::size(const std::string& collection_name) const {
  std::shared_lock lock(mutex_);
  auto it = collections_.find(collection_name);
  return it == collections_.end() ? 0 : it->second->docs.size();
}

}  // namespace gaia::store
