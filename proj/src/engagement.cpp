#include "gaia/engagement.hpp"

#include <algorithm>
#include <cmath>

#include <absl/time/civil_time.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gaia/error.hpp"

namespace gaia::engagement {

using nlohmann::json;

std::vector<BadgeRule> default_badge_rules() {
  return {{"bronze", 100}, {"silver", 250}, {"gold", 500}};
}

CommunityConfig community_from_json(const json& j) {
  CommunityConfig cfg;
  try {
    for (const auto& q : j.value("quests", json::array())) {
      QuestDef d{q.at("id").get<std::string>(), q.at("points").get<std::int64_t>()};
      if (d.id.empty() || d.points < 0) {
        throw Error(Errc::validation_failed, "quest '" + d.id + "' needs an id and points >= 0");
      }
      cfg.quests.push_back(std::move(d));
    }
    for (const auto& c : j.value("classes", json::array())) {
      cfg.classes.push_back({c.at("id").get<std::string>(), c.at("school").get<std::string>()});
    }
    if (j.contains("badges")) {
      cfg.badges.clear();
      for (const auto& b : j["badges"]) {
        cfg.badges.push_back(
            {b.at("kind").get<std::string>(), b.at("min_class_score").get<std::int64_t>()});
      }
    }
  } catch (const json::exception& e) {
    throw Error(Errc::validation_failed, std::string("bad community definition: ") + e.what());
  }
  return cfg;
}

std::string iso_week(Instant t, const absl::TimeZone& tz) {
  const absl::CivilDay day(tz.At(to_absl(t)).cs);
  // The ISO year is the one holding the Thursday of the week.
  const int from_monday = static_cast<int>(absl::GetWeekday(day));
  const absl::CivilDay thursday = day - from_monday + 3;
  const absl::CivilDay jan1(thursday.year(), 1, 1);
  const auto week = (thursday - jan1) / 7 + 1;
  return fmt::format("{:04d}-W{:02d}", thursday.year(), week);
}

std::optional<Scope> parse_scope(std::string_view text) {
  if (text == "classes") return Scope::classes;
  if (text == "schools") return Scope::schools;
  return std::nullopt;
}

bool ranks_before(const Standing& a, const Standing& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.last_scored_at != b.last_scored_at) {
    if (!a.last_scored_at) return false;
    if (!b.last_scored_at) return true;
    return *a.last_scored_at < *b.last_scored_at;
  }
  return a.id < b.id;
}

std::int64_t facility_points(double delta_pct) {
  if (!std::isfinite(delta_pct)) return 0;
  // Tolerates rounding in the percentage so that a 10% cut is worth 10.
  return static_cast<std::int64_t>(std::floor(std::max(0.0, -delta_pct) + 1e-9));
}

json to_json(const Standing& s) {
  return json{{"id", s.id},
              {"score", s.score},
              {"last_scored_at",
               s.last_scored_at ? json(format_instant(*s.last_scored_at)) : json(nullptr)}};
}

json to_json(const Badge& b) {
  return json{{"class_id", b.class_id},
              {"kind", b.kind},
              {"awarded_at", format_instant(b.awarded_at)},
              {"criterion", b.criterion}};
}

json to_json(const QuestCompletion& c) {
  return json{{"student", c.student},
              {"quest", c.quest},
              {"points", c.points},
              {"completed_at", format_instant(c.completed_at)}};
}

json to_json(const WeeklyTask& t) {
  json subs = json::array();
  for (const auto& s : t.submissions) {
    subs.push_back(json{{"user", s.user}, {"content", s.content}, {"at", format_instant(s.at)}});
  }
  return json{{"id", t.id},
              {"week", t.week},
              {"description", t.description},
              {"hashtag", t.hashtag},
              {"submissions", subs}};
}

json to_json(const ClassInfo& c) {
  json badges = json::array();
  for (const auto& b : c.badges) badges.push_back(to_json(b));
  json recent = json::array();
  for (const auto& r : c.recent) recent.push_back(to_json(r));
  return json{{"id", c.id},
              {"school", c.school},
              {"score", c.score},
              {"students", c.students},
              {"badges", badges},
              {"recent", recent}};
}

Engagement::Engagement(CommunityConfig config, store::DocStore* docs, Clock clock)
    : config_(std::move(config)), docs_(docs), clock_(std::move(clock)) {
  for (const auto& q : config_.quests) {
    if (!quest_points_.emplace(q.id, q.points).second) {
      throw Error(Errc::duplicate_id, "quest '" + q.id + "' defined twice");
    }
  }
  for (const auto& c : config_.classes) {
    if (!classes_.emplace(c.id, c).second) {
      throw Error(Errc::duplicate_id, "class '" + c.id + "' defined twice");
    }
    class_last_[c.id] = std::nullopt;
  }
  std::sort(config_.badges.begin(), config_.badges.end(),
            [](const BadgeRule& a, const BadgeRule& b) {
              return a.min_class_score < b.min_class_score;
            });
  load();
}

void Engagement::persist(const std::string& collection, const std::string& id, const json& doc) {
  if (docs_) docs_->put(collection, id, doc);
}

void Engagement::load() {
  if (!docs_) return;
  for (const auto& [id, doc] : docs_->list("completions")) {
    const std::string class_id = doc.at("class_id").get<std::string>();
    if (!classes_.count(class_id)) {
      spdlog::warn("dropping stored completion {} of unknown class {}", id, class_id);
      continue;
    }
    students_[doc.at("student").get<std::string>()].class_id = class_id;
    apply_completion(QuestCompletion{doc.at("student"), doc.at("quest"), doc.at("points"),
                                     parse_instant(doc.at("completed_at").get<std::string>())});
  }
  for (const auto& [id, doc] : docs_->list("badges")) {
    badges_.push_back(Badge{doc.at("class_id"), doc.at("kind"),
                            parse_instant(doc.at("awarded_at").get<std::string>()),
                            doc.at("criterion")});
  }
  for (const auto& [id, doc] : docs_->list("facility_credits")) {
    auto& credit = school_credit_[doc.at("school").get<std::string>()];
    const auto points = doc.at("points").get<std::int64_t>();
    credit.points += points;
    if (points > 0) credit.last_at = parse_instant(doc.at("at").get<std::string>());
    ++credit_count_;
  }
  for (const auto& [id, doc] : docs_->list("weekly_tasks")) {
    WeeklyTask t{doc.at("id"), doc.at("week"), doc.at("description"), doc.at("hashtag"), {}};
    for (const auto& s : doc.at("submissions")) {
      t.submissions.push_back(
          Submission{s.at("user"), s.at("content"), parse_instant(s.at("at").get<std::string>())});
    }
    tasks_.push_back(std::move(t));
  }
}

void Engagement::enroll(const std::string& student, const std::string& class_id) {
  std::lock_guard lock(mutex_);
  if (!classes_.count(class_id)) throw Error(Errc::unknown_class, "unknown class '" + class_id + "'");
  students_[student].class_id = class_id;
}

void Engagement::apply_completion(const QuestCompletion& c) {
  StudentState& s = students_[c.student];
  s.completed.insert(c.quest);
  s.score += c.points;
  auto& last = class_last_[s.class_id];
  if (!last || *last < c.completed_at) last = c.completed_at;
  completions_.push_back(c);
}

void Engagement::check_badges(const std::string& class_id, Instant at) {
  const std::int64_t score = class_score_locked(class_id);
  for (const auto& rule : config_.badges) {
    if (score < rule.min_class_score) continue;
    const bool held = std::any_of(badges_.begin(), badges_.end(), [&](const Badge& b) {
      return b.class_id == class_id && b.kind == rule.kind;
    });
    if (held) continue;
    Badge b{class_id, rule.kind, at,
            json{{"min_class_score", rule.min_class_score}, {"class_score", score}}};
    persist("badges", class_id + "/" + rule.kind, to_json(b));
    badges_.push_back(std::move(b));
  }
}

std::int64_t Engagement::award_points(const std::string& student, const std::string& quest) {
  std::lock_guard lock(mutex_);
  auto st = students_.find(student);
  if (st == students_.end() || st->second.class_id.empty()) {
    throw Error(Errc::unknown_student, "unknown student '" + student + "'");
  }
  auto q = quest_points_.find(quest);
  if (q == quest_points_.end()) throw Error(Errc::unknown_quest, "unknown quest '" + quest + "'");
  if (st->second.completed.count(quest)) {
    throw Error(Errc::duplicate_completion,
                "student '" + student + "' already completed quest '" + quest + "'");
  }
  const QuestCompletion c{student, quest, q->second, clock_()};
  json doc = to_json(c);
  doc["class_id"] = st->second.class_id;
  persist("completions", student + "/" + quest, doc);
  apply_completion(c);
  check_badges(st->second.class_id, c.completed_at);
  return st->second.score;
}

std::int64_t Engagement::student_score(const std::string& student) const {
  std::lock_guard lock(mutex_);
  auto it = students_.find(student);
  if (it == students_.end()) throw Error(Errc::unknown_student, "unknown student '" + student + "'");
  return it->second.score;
}

std::int64_t Engagement::class_score_locked(const std::string& class_id) const {
  if (!classes_.count(class_id)) throw Error(Errc::unknown_class, "unknown class '" + class_id + "'");
  std::int64_t total = 0;
  for (const auto& [id, s] : students_) {
    if (s.class_id == class_id) total += s.score;
  }
  return total;
}

std::int64_t Engagement::class_score(const std::string& class_id) const {
  std::lock_guard lock(mutex_);
  return class_score_locked(class_id);
}

ClassInfo Engagement::class_info(const std::string& class_id, std::size_t recent) const {
  std::lock_guard lock(mutex_);
  ClassInfo info;
  info.id = class_id;
  info.score = class_score_locked(class_id);
  info.school = classes_.at(class_id).school;
  for (const auto& [id, s] : students_) {
    if (s.class_id == class_id) info.students[id] = s.score;
  }
  for (const auto& b : badges_) {
    if (b.class_id == class_id) info.badges.push_back(b);
  }
  for (auto it = completions_.rbegin(); it != completions_.rend() && info.recent.size() < recent;
       ++it) {
    auto st = students_.find(it->student);
    if (st != students_.end() && st->second.class_id == class_id) info.recent.push_back(*it);
  }
  return info;
}

void Engagement::credit_facility_points(const std::string& school, std::int64_t points,
                                        const std::string& reason) {
  if (points < 0) throw Error(Errc::validation_failed, "facility points cannot be negative");
  std::lock_guard lock(mutex_);
  const Instant at = clock_();
  ++credit_count_;
  persist("facility_credits", fmt::format("c-{:08d}", credit_count_),
          json{{"school", school}, {"points", points}, {"reason", reason},
               {"at", format_instant(at)}});
  auto& credit = school_credit_[school];
  credit.points += points;
  if (points > 0) credit.last_at = at;
}

std::int64_t Engagement::school_facility_points(const std::string& school) const {
  std::lock_guard lock(mutex_);
  auto it = school_credit_.find(school);
  return it == school_credit_.end() ? 0 : it->second.points;
}

std::int64_t Engagement::award_facility_points(const store::SeriesStore& store,
                                               const model::ResourceTree& tree,
                                               const std::string& building_id,
                                               const analytics::Period& window,
                                               const analytics::Period& baseline) {
  const auto cmp = analytics::compare_periods(store, tree, building_id, SensorKind::energy_kwh,
                                              window, baseline);
  const std::int64_t points = cmp.delta_pct ? facility_points(*cmp.delta_pct) : 0;
  const model::ResourceNode* site = tree.site_of(tree.at(building_id));
  if (!site) throw Error(Errc::not_found, "building '" + building_id + "' has no site");
  credit_facility_points(site->id, points, building_id + ": " + cmp.comments);
  return points;
}

std::vector<Standing> Engagement::leaderboard(Scope scope) const {
  std::lock_guard lock(mutex_);
  std::vector<Standing> out;
  if (scope == Scope::classes) {
    for (const auto& [id, c] : classes_) {
      out.push_back({id, class_score_locked(id), class_last_.at(id)});
    }
  } else {
    std::map<std::string, Standing> schools;
    for (const auto& [id, c] : classes_) {
      Standing& s = schools[c.school];
      s.id = c.school;
      s.score += class_score_locked(id);
      const auto& last = class_last_.at(id);
      if (last && (!s.last_scored_at || *s.last_scored_at < *last)) s.last_scored_at = last;
    }
    for (const auto& [school, credit] : school_credit_) {
      Standing& s = schools[school];
      s.id = school;
      s.score += credit.points;
      if (credit.last_at && (!s.last_scored_at || *s.last_scored_at < *credit.last_at)) {
        s.last_scored_at = credit.last_at;
      }
    }
    for (auto& [id, s] : schools) out.push_back(s);
  }
  std::sort(out.begin(), out.end(), ranks_before);
  return out;
}

WeeklyTask Engagement::create_weekly_task(const std::string& week, const std::string& description,
                                          const std::string& hashtag) {
  if (week.size() != 8 || week[4] != '-' || week[5] != 'W') {
    throw Error(Errc::validation_failed, "week must look like 2017-W03");
  }
  if (description.empty() || hashtag.empty()) {
    throw Error(Errc::validation_failed, "weekly task needs a description and a hashtag");
  }
  std::lock_guard lock(mutex_);
  for (const auto& t : tasks_) {
    if (t.week == week) throw Error(Errc::conflict, "week " + week + " already has a task");
  }
  WeeklyTask t{"task-" + week, week, description, hashtag, {}};
  persist("weekly_tasks", t.id, to_json(t));
  tasks_.push_back(t);
  return t;
}

void Engagement::submit(const std::string& task_id, const std::string& user,
                        const std::string& content) {
  if (content.empty()) throw Error(Errc::validation_failed, "submission is empty");
  std::lock_guard lock(mutex_);
  auto it = std::find_if(tasks_.begin(), tasks_.end(),
                         [&](const WeeklyTask& t) { return t.id == task_id; });
  if (it == tasks_.end()) throw Error(Errc::not_found, "unknown weekly task '" + task_id + "'");
  it->submissions.push_back(Submission{user, content, clock_()});
  persist("weekly_tasks", it->id, to_json(*it));
}

std::vector<WeeklyTask> Engagement::weekly_tasks() const {
  std::lock_guard lock(mutex_);
  return tasks_;
}

}  // namespace gaia::engagement
