#include "gaia/api.hpp"

#include <charconv>

#include <absl/time/civil_time.h>
#include <spdlog/spdlog.h>

#include "gaia/analytics.hpp"

namespace gaia::service {

using nlohmann::json;

int http_status(Errc code) {
  switch (code) {
    case Errc::unauthorized: return 403;
    case Errc::not_found:
    case Errc::unknown_resource:
    case Errc::unknown_series:
    case Errc::unknown_scope:
    case Errc::unknown_quest:
    case Errc::unknown_class:
    case Errc::unknown_student:
    case Errc::unknown_room: return 404;
    case Errc::conflict:
    case Errc::duplicate_id:
    case Errc::duplicate_name:
    case Errc::duplicate_completion:
    case Errc::overlapping_scenario: return 409;
    case Errc::no_data:
    case Errc::insufficient_history:
    case Errc::missing_metadata:
    case Errc::too_few_points: return 422;
    case Errc::store_corrupt:
    case Errc::io_error:
    case Errc::bind_error: return 500;
    default: return 400;
  }
}

std::string error_body(const Error& e) {
  json err{{"code", to_string(e.code())}, {"message", e.what()}};
  if (const auto* syntax = dynamic_cast<const SyntaxError*>(&e)) {
    err["token"] = syntax->token();
    err["column"] = syntax->column();
  }
  return json{{"error", err}}.dump();
}

std::string percent_decode(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '%' && i + 2 < text.size()) {
      unsigned value = 0;
      auto [ptr, ec] = std::from_chars(text.data() + i + 1, text.data() + i + 3, value, 16);
      if (ec == std::errc{} && ptr == text.data() + i + 3) {
        out.push_back(static_cast<char>(value));
        i += 2;
        continue;
      }
    }
    out.push_back(c == '+' ? ' ' : c);
  }
  return out;
}

ParsedTarget parse_target(std::string_view target) {
  ParsedTarget out;
  std::string_view path = target;
  std::string_view query;
  if (auto q = target.find('?'); q != std::string_view::npos) {
    path = target.substr(0, q);
    query = target.substr(q + 1);
  }
  std::size_t start = 0;
  while (start <= path.size()) {
    auto slash = path.find('/', start);
    if (slash == std::string_view::npos) slash = path.size();
    if (slash > start) out.segments.push_back(percent_decode(path.substr(start, slash - start)));
    start = slash + 1;
  }
  start = 0;
  while (start < query.size()) {
    auto amp = query.find('&', start);
    if (amp == std::string_view::npos) amp = query.size();
    const auto pair = query.substr(start, amp - start);
    if (!pair.empty()) {
      const auto eq = pair.find('=');
      if (eq == std::string_view::npos) {
        out.query[percent_decode(pair)] = "";
      } else {
        out.query[percent_decode(pair.substr(0, eq))] = percent_decode(pair.substr(eq + 1));
      }
    }
    start = amp + 1;
  }
  return out;
}

std::optional<std::string> bearer_token(std::string_view header) {
  constexpr std::string_view prefix = "Bearer ";
  if (!header.starts_with(prefix)) return std::nullopt;
  header.remove_prefix(prefix.size());
  while (!header.empty() && header.front() == ' ') header.remove_prefix(1);
  while (!header.empty() && header.back() == ' ') header.remove_suffix(1);
  if (header.empty()) return std::nullopt;
  return std::string(header);
}

namespace {

struct Unauthenticated {
  std::string message;
};

struct Route {
  const HttpRequest& req;
  ParsedTarget target;

  const std::vector<std::string>& seg() const { return target.segments; }
  std::optional<std::string> param(const std::string& key) const {
    auto it = target.query.find(key);
    if (it == target.query.end() || it->second.empty()) return std::nullopt;
    return it->second;
  }
  std::string required(const std::string& key) const {
    auto v = param(key);
    if (!v) throw Error(Errc::validation_failed, "missing query parameter '" + key + "'");
    return *v;
  }
};

HttpResponse ok(const json& body, int status = 200) { return {status, "application/json", body.dump()}; }

json parse_body(const HttpRequest& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw Error(Errc::validation_failed, std::string("request body is not JSON: ") + e.what());
  }
}

json ack_json(const ingest::Ack& ack) {
  return json{{"series_id", ack.series_id}, {"seq", ack.seq}, {"duplicate", ack.duplicate}};
}

std::int64_t int_param(const Route& r, const std::string& key, std::int64_t fallback) {
  auto v = r.param(key);
  if (!v) return fallback;
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || ptr != v->data() + v->size()) {
    throw Error(Errc::validation_failed, "query parameter '" + key + "' must be an integer");
  }
  return out;
}

double double_param(const Route& r, const std::string& key, double fallback) {
  auto v = r.param(key);
  if (!v) return fallback;
  double out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc{} || ptr != v->data() + v->size()) {
    throw Error(Errc::validation_failed, "query parameter '" + key + "' must be a number");
  }
  return out;
}

std::string join(std::span<const std::string> parts) {
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty()) out += '/';
    out += p;
  }
  return out;
}

class Handler {
 public:
  Handler(Platform& p, const HttpRequest& req) : p_(p), r_{req, parse_target(req.target)} {}

  HttpResponse run();

 private:
  const model::User* maybe_user() const {
    auto token = bearer_token(r_.req.authorization);
    if (!token) return nullptr;
    const model::User* u = p_.user(*token);
    if (!u) throw Unauthenticated{"unknown user"};
    return u;
  }
  const model::User& user() const {
    const model::User* u = maybe_user();
    if (!u) throw Unauthenticated{"missing bearer token"};
    return *u;
  }

  absl::TimeZone series_zone(const store::SeriesMeta& meta) const {
    const auto tree = p_.tree().snapshot();
    const model::ResourceNode* node = tree->try_resolve(meta.resource_path);
    return load_zone(node ? model::timezone_of(*tree, *node) : "UTC");
  }
  store::SeriesMeta series_meta(const std::string& id) const {
    auto meta = p_.series().series(id);
    if (!meta) throw Error(Errc::unknown_series, "unknown series '" + id + "'");
    return *meta;
  }
  std::pair<Instant, Instant> range(const absl::TimeZone& tz) const {
    return {parse_instant_or_date(r_.required("from"), tz),
            parse_instant_or_date(r_.required("to"), tz)};
  }

  HttpResponse readings();
  HttpResponse upload(const std::string& series_id);
  HttpResponse manual();
  HttpResponse series(const std::vector<std::string>& s);
  HttpResponse resource_rules(const std::vector<std::string>& s);
  HttpResponse notifications();
  HttpResponse buildings(const std::vector<std::string>& s);
  HttpResponse community(const std::vector<std::string>& s);

  Platform& p_;
  Route r_;
};

HttpResponse Handler::run() {
  const auto& s = r_.seg();
  const std::string& m = r_.req.method;
  if (s.size() < 2 || s[0] != "api" || s[1] != "v1") {
    throw Error(Errc::not_found, "no such endpoint");
  }
  const std::vector<std::string> rest(s.begin() + 2, s.end());
  if (rest.empty()) throw Error(Errc::not_found, "no such endpoint");
  const std::string& head = rest[0];

  if (head == "health" && m == "GET") return ok(p_.health());
  if (head == "readings" && rest.size() == 1 && m == "POST") return readings();
  if (head == "uploads" && rest.size() == 2 && m == "POST") return upload(rest[1]);
  if (head == "manual" && rest.size() == 1 && m == "POST") return manual();
  if (head == "series") return series(rest);
  if (head == "resources") return resource_rules(rest);
  if (head == "notifications" && rest.size() == 1 && m == "GET") return notifications();
  if (head == "buildings") return buildings(rest);
  return community(rest);
}

HttpResponse Handler::readings() {
  const model::User* u = maybe_user();
  const json body = parse_body(r_.req);
  auto one = [&](const json& item) {
    ingest::Reading reading = ingest::reading_from_json(item);
    return ack_json(p_.ingestion().ingest_reading(std::move(reading), u));
  };
  if (!body.is_array()) return ok(json{{"ack", one(body)}});
  json results = json::array();
  std::size_t failed = 0;
  for (const auto& item : body) {
    try {
      results.push_back(json{{"ack", one(item)}});
    } catch (const Error& e) {
      ++failed;
      results.push_back(json::parse(error_body(e)));
    }
  }
  const int status = failed == 0 ? 200 : (failed == body.size() ? 400 : 207);
  return ok(json{{"results", results}}, status);
}

HttpResponse Handler::upload(const std::string& series_id) {
  const model::User& u = user();
  store::SeriesMeta meta;
  if (auto known = p_.series().series(series_id)) {
    meta = *known;
  } else if (auto resource = r_.param("resource")) {
    meta.series_id = series_id;
    meta.resource_path = *resource;
    const auto kind_text = r_.param("kind").value_or("energy_kwh");
    auto kind = parse_sensor_kind(kind_text);
    if (!kind) throw Error(Errc::unknown_kind, "unknown sensor kind '" + kind_text + "'");
    meta.kind = *kind;
  } else if (auto parsed = store::parse_default_series_id(series_id)) {
    meta = *parsed;
  } else {
    throw Error(Errc::unknown_series,
                "unknown series '" + series_id + "'; pass resource= and kind= to create it");
  }
  if (auto interval = r_.param("interval_s")) meta.nominal_interval_s = int_param(r_, "interval_s", 0);
  if (!meta.nominal_interval_s) meta.nominal_interval_s = 900;
  const auto report = p_.ingestion().ingest_file(r_.req.body, meta, u);
  return ok(json{{"report", ingest::to_json(report)}});
}

HttpResponse Handler::manual() {
  const model::User& u = user();
  json body = parse_body(r_.req);
  if (!body.is_object()) throw Error(Errc::validation_failed, "body must be an object");
  if (body.contains("cumulative_kwh")) {
    const auto date_text = body.at("date").get<std::string>();
    const auto tz = absl::UTCTimeZone();
    const Instant day = parse_instant_or_date(date_text, tz);
    const absl::CivilDay civil(tz.At(to_absl(day)).cs);
    if (!body.at("cumulative_kwh").is_number()) {
      throw Error(Errc::validation_failed, "cumulative_kwh must be a number");
    }
    const auto ack = p_.ingestion().ingest_manual_monthly(
        body.at("series_id").get<std::string>(), civil, body["cumulative_kwh"].get<double>(), u);
    return ok(json{{"ack", ack_json(ack)}});
  }
  body["source"] = "manual";
  ingest::Reading reading = ingest::reading_from_json(body);
  return ok(json{{"ack", ack_json(p_.ingestion().ingest_reading(std::move(reading), &u))}});
}

HttpResponse Handler::series(const std::vector<std::string>& s) {
  user();
  if (r_.req.method != "GET") throw Error(Errc::not_found, "no such endpoint");
  if (s.size() == 1) {
    json out = json::array();
    for (const auto& meta : p_.series().list_series()) out.push_back(meta);
    return ok(out);
  }
  if (s.size() != 3) throw Error(Errc::not_found, "no such endpoint");
  const store::SeriesMeta meta = series_meta(s[1]);
  const absl::TimeZone tz = series_zone(meta);
  if (s[2] == "range") {
    auto [from, to] = range(tz);
    json out = json::array();
    for (const auto& pt : p_.series().query_range(meta.series_id, from, to)) {
      out.push_back(json{{"timestamp", format_instant(pt.timestamp)}, {"value", pt.value}, {"seq", pt.seq}});
    }
    return ok(out);
  }
  if (s[2] == "agg") {
    auto [from, to] = range(tz);
    const auto scale_text = r_.required("scale");
    auto scale = store::parse_timescale(scale_text);
    if (!scale) throw Error(Errc::validation_failed, "unknown timescale '" + scale_text + "'");
    store::Agg agg = store::default_agg(meta.kind);
    if (auto agg_text = r_.param("agg")) {
      auto parsed = store::parse_agg(*agg_text);
      if (!parsed) throw Error(Errc::validation_failed, "unknown aggregate '" + *agg_text + "'");
      agg = *parsed;
    }
    json out = json::array();
    for (const auto& b : p_.series().aggregate(meta.series_id, *scale, agg, from, to, tz)) {
      out.push_back(json{{"bucket_start", format_instant(b.bucket_start)},
                         {"timescale", store::to_string(b.timescale)},
                         {"agg", store::to_string(b.agg)},
                         {"value", b.value},
                         {"sample_count", b.sample_count}});
    }
    return ok(out);
  }
  if (s[2] == "anomalies") {
    auto [from, to] = range(tz);
    analytics::AnomalyParams params;
    params.baseline_weeks = static_cast<int>(int_param(r_, "baseline_weeks", params.baseline_weeks));
    params.threshold = double_param(r_, "threshold", params.threshold);
    const auto points = p_.series().all_points(meta.series_id);
    json out = json::array();
    for (const auto& a : analytics::detect_anomalies(meta.series_id, points, from, to, params, tz)) {
      out.push_back(analytics::to_json(a));
    }
    return ok(out);
  }
  throw Error(Errc::not_found, "no such endpoint");
}

HttpResponse Handler::resource_rules(const std::vector<std::string>& s) {
  const model::User& u = user();
  const auto tree = p_.tree().snapshot();
  if (s.size() == 1 && r_.req.method == "GET") return ok(model::tree_to_json(*tree));
  // resources/{path...}/rules[/{id}]
  std::size_t rules_at = 0;
  if (s.size() >= 3 && s.back() == "rules") {
    rules_at = s.size() - 1;
  } else if (s.size() >= 4 && s[s.size() - 2] == "rules") {
    rules_at = s.size() - 2;
  } else {
    throw Error(Errc::not_found, "no such endpoint");
  }
  const std::string path = join(std::span(s).subspan(1, rules_at - 1));
  const model::ResourceNode& node = tree->resolve_path(path);
  const std::string& canonical = tree->canonical_path(node);
  const std::optional<std::string> id =
      rules_at + 1 < s.size() ? std::optional<std::string>(s.back()) : std::nullopt;
  const std::string& m = r_.req.method;

  if (!id) {
    if (m != "GET") throw Error(Errc::not_found, "no such endpoint");
    json out = json::array();
    for (const auto& listed : p_.rules().rules_for(*tree, node)) {
      json j = rules::to_json(listed.rule);
      j["inherited_from"] = listed.inherited_from.empty() ? json(nullptr) : json(listed.inherited_from);
      out.push_back(std::move(j));
    }
    return ok(out);
  }
  if (m == "GET") {
    auto rule = p_.rules().rule(*id);
    if (!rule || rule->target != canonical) {
      throw Error(Errc::not_found, "no rule '" + *id + "' on " + canonical);
    }
    return ok(rules::to_json(*rule));
  }
  if (m == "PUT") {
    json body = parse_body(r_.req);
    if (!body.is_object()) throw Error(Errc::validation_failed, "rule body must be an object");
    if (body.contains("id") && body["id"] != *id) {
      throw Error(Errc::validation_failed, "rule id in the body differs from the URL");
    }
    body["id"] = *id;
    body["target"] = canonical;
    const rules::Rule rule = p_.rules().upsert_rule(rules::rule_spec_from_json(body), u, *tree);
    return ok(rules::to_json(rule));
  }
  if (m == "DELETE") {
    auto rule = p_.rules().rule(*id);
    if (!rule || rule->target != canonical) {
      throw Error(Errc::not_found, "no rule '" + *id + "' on " + canonical);
    }
    p_.rules().delete_rule(*id, u, *tree);
    return ok(json{{"deleted", *id}});
  }
  throw Error(Errc::not_found, "no such endpoint");
}

HttpResponse Handler::notifications() {
  user();
  std::string scope = r_.param("scope").value_or("");
  if (!scope.empty()) {
    const auto tree = p_.tree().snapshot();
    const auto* node = tree->try_resolve(scope);
    if (!node) throw Error(Errc::unknown_scope, "unknown scope '" + scope + "'");
    scope = tree->canonical_path(*node);
  }
  std::optional<Instant> since;
  if (auto s = r_.param("since")) since = parse_instant(*s);
  const auto limit = int_param(r_, "limit", 0);
  if (limit < 0) throw Error(Errc::validation_failed, "limit must be >= 0");
  json out = json::array();
  for (const auto& n : p_.notifier().log(scope, since, static_cast<std::size_t>(limit))) {
    out.push_back(notify::to_json(n));
  }
  return ok(out);
}

HttpResponse Handler::buildings(const std::vector<std::string>& s) {
  const model::User& u = user();
  if (s.size() != 3) throw Error(Errc::not_found, "no such endpoint");
  const std::string& id = s[1];
  const auto tree = p_.tree().snapshot();
  const model::ResourceNode* building = tree->find(id);
  if (!building || building->kind != model::NodeKind::building) {
    throw Error(Errc::not_found, "unknown building '" + id + "'");
  }
  const absl::TimeZone tz = load_zone(model::timezone_of(*tree, *building));
  const std::string& m = r_.req.method;
  if (s[2] == "meta" && m == "PUT") {
    const json body = parse_body(r_.req);
    model::BuildingMeta meta;
    try {
      meta = body.get<model::BuildingMeta>();
    } catch (const json::exception& e) {
      throw Error(Errc::validation_failed, std::string("bad building metadata: ") + e.what());
    }
    return ok(json(p_.update_building_meta(id, meta, u)));
  }
  if (s[2] == "meta" && m == "GET") {
    return ok(building->meta ? json(*building->meta) : json(nullptr));
  }
  if (s[2] == "compare" && m == "GET") {
    auto kind_text = r_.param("metric").value_or("energy_kwh");
    auto kind = parse_sensor_kind(kind_text);
    if (!kind) throw Error(Errc::unknown_kind, "unknown metric '" + kind_text + "'");
    const auto period = analytics::parse_period(r_.required("period"), tz);
    const auto baseline = r_.param("baseline") ? analytics::parse_period(*r_.param("baseline"), tz)
                                               : analytics::shift_years(period, -1, tz);
    return ok(analytics::to_json(
        analytics::compare_periods(p_.series(), *tree, id, *kind, period, baseline)));
  }
  if (s[2] == "peers" && m == "GET") {
    json out{{"building", id}, {"peers", analytics::peer_group(*tree, id)}};
    if (auto period = r_.param("period")) {
      out["comparison"] = analytics::to_json(analytics::compare_with_peers(
          p_.series(), *tree, id, analytics::parse_period(*period, tz)));
    }
    return ok(out);
  }
  if (s[2] == "facility-points" && m == "POST") {
    if (!model::authorize(u, model::Action::configure_facility, *tree, *building)) {
      throw Error(Errc::unauthorized, "only the building manager may claim facility points");
    }
    const json body = parse_body(r_.req);
    const auto window = analytics::parse_period(body.at("period").get<std::string>(), tz);
    const auto baseline = body.contains("baseline")
                              ? analytics::parse_period(body["baseline"].get<std::string>(), tz)
                              : analytics::shift_years(window, -1, tz);
    const auto points =
        p_.engagement().award_facility_points(p_.series(), *tree, id, window, baseline);
    return ok(json{{"building", id}, {"points", points}});
  }
  throw Error(Errc::not_found, "no such endpoint");
}

HttpResponse Handler::community(const std::vector<std::string>& s) {
  const model::User& u = user();
  const std::string& m = r_.req.method;
  auto& eng = p_.engagement();
  if (s[0] == "leaderboard" && s.size() == 1 && m == "GET") {
    const auto text = r_.param("scope").value_or("classes");
    auto scope = engagement::parse_scope(text);
    if (!scope) throw Error(Errc::validation_failed, "scope must be classes or schools");
    json out = json::array();
    std::size_t rank = 0;
    for (const auto& st : eng.leaderboard(*scope)) {
      json j = engagement::to_json(st);
      j["rank"] = ++rank;
      out.push_back(std::move(j));
    }
    return ok(out);
  }
  if (s[0] == "quests" && s.size() == 3 && s[2] == "complete" && m == "POST") {
    std::string student = u.id;
    if (u.role != model::Role::student) {
      // Teachers record completions for their students.
      const json body = parse_body(r_.req);
      student = body.value("student", std::string{});
      if (student.empty()) throw Error(Errc::validation_failed, "body must name the student");
      const model::User* target = p_.user(student);
      if (u.role != model::Role::teacher || !target || target->class_id != u.class_id) {
        throw Error(Errc::unauthorized, "only a student's teacher may record completions");
      }
    }
    const auto score = eng.award_points(student, s[1]);
    return ok(json{{"student", student}, {"quest", s[1]}, {"score", score}});
  }
  if (s[0] == "classes" && s.size() == 2 && m == "GET") {
    return ok(engagement::to_json(eng.class_info(s[1])));
  }
  if (s[0] == "weekly-tasks") {
    if (s.size() == 1 && m == "GET") {
      json out = json::array();
      for (const auto& t : eng.weekly_tasks()) out.push_back(engagement::to_json(t));
      return ok(out);
    }
    if (s.size() == 1 && m == "POST") {
      if (u.role == model::Role::student) {
        throw Error(Errc::unauthorized, "students cannot set weekly tasks");
      }
      const json body = parse_body(r_.req);
      const auto task = eng.create_weekly_task(body.at("week").get<std::string>(),
                                               body.at("description").get<std::string>(),
                                               body.at("hashtag").get<std::string>());
      return ok(engagement::to_json(task), 201);
    }
    if (s.size() == 3 && s[2] == "submissions" && m == "POST") {
      const json body = parse_body(r_.req);
      eng.submit(s[1], u.id, body.at("content").get<std::string>());
      return ok(json{{"task", s[1]}, {"submitted", true}}, 201);
    }
  }
  throw Error(Errc::not_found, "no such endpoint");
}

}  // namespace

HttpResponse Api::handle(const HttpRequest& req) {
  try {
    return Handler(p_, req).run();
  } catch (const Unauthenticated& e) {
    return {401, "application/json",
            json{{"error", {{"code", "Unauthorized"}, {"message", e.message}}}}.dump()};
  } catch (const Error& e) {
    const int status = http_status(e.code());
    if (status >= 500) spdlog::error("{} {}: {}", req.method, req.target, e.what());
    return {status, "application/json", error_body(e)};
  } catch (const json::exception& e) {
    return {400, "application/json",
            error_body(Error(Errc::validation_failed, std::string("bad request body: ") + e.what()))};
  } catch (const std::exception& e) {
    spdlog::error("{} {}: {}", req.method, req.target, e.what());
    return {500, "application/json",
            json{{"error", {{"code", "Internal"}, {"message", e.what()}}}}.dump()};
  }
}

}  // namespace gaia::service
