#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaia/analytics.hpp"
#include "gaia/series_store.hpp"
#include "gaia/time.hpp"

namespace gaia::engagement {

struct QuestDef {
  std::string id;
  std::int64_t points = 0;
};

struct ClassDef {
  std::string id;
  std::string school;  // site id
};

struct BadgeRule {
  std::string kind;
  std::int64_t min_class_score = 0;
};

std::vector<BadgeRule> default_badge_rules();

struct CommunityConfig {
  std::vector<QuestDef> quests;
  std::vector<ClassDef> classes;
  std::vector<BadgeRule> badges = default_badge_rules();
};

// `{"quests": [{id, points}], "classes": [{id, school}], "badges"?: [...]}`.
CommunityConfig community_from_json(const nlohmann::json& j);

struct QuestCompletion {
  std::string student;
  std::string quest;
  std::int64_t points = 0;
  Instant completed_at;
};

struct Badge {
  std::string class_id;
  std::string kind;
  Instant awarded_at;
  nlohmann::json criterion;
};

struct Submission {
  std::string user;
  std::string content;  // link or text
  Instant at;
};

struct WeeklyTask {
  std::string id;
  std::string week;  // ISO week, e.g. "2017-W03"
  std::string description;
  std::string hashtag;
  std::vector<Submission> submissions;
};

std::string iso_week(Instant t, const absl::TimeZone& tz);

enum class Scope { classes, schools };
std::optional<Scope> parse_scope(std::string_view text);

struct Standing {
  std::string id;
  std::int64_t score = 0;
  std::optional<Instant> last_scored_at;
};

// Score descending, then earliest last scoring (never scored ranks after any
// timestamp), then id.
bool ranks_before(const Standing& a, const Standing& b);

// One point per whole percent of reduction; zero when consumption rose.
std::int64_t facility_points(double delta_pct);

struct ClassInfo {
  std::string id;
  std::string school;
  std::int64_t score = 0;
  std::map<std::string, std::int64_t> students;
  std::vector<Badge> badges;
  std::vector<QuestCompletion> recent;
};

nlohmann::json to_json(const Standing& s);
nlohmann::json to_json(const Badge& b);
nlohmann::json to_json(const QuestCompletion& c);
nlohmann::json to_json(const WeeklyTask& t);
nlohmann::json to_json(const ClassInfo& c);

class Engagement {
 public:
  Engagement(CommunityConfig config, store::DocStore* docs = nullptr,
             Clock clock = system_clock());

  // Throws UnknownClass.
  void enroll(const std::string& student, const std::string& class_id);

  // Returns the student's new score. Throws UnknownStudent, UnknownQuest,
  // DuplicateCompletion.
  std::int64_t award_points(const std::string& student, const std::string& quest);

  std::int64_t student_score(const std::string& student) const;
  std::int64_t class_score(const std::string& class_id) const;
  ClassInfo class_info(const std::string& class_id, std::size_t recent = 10) const;

  // Adds points to the school (site) owning the classes.
  void credit_facility_points(const std::string& school, std::int64_t points,
                              const std::string& reason);
  std::int64_t school_facility_points(const std::string& school) const;

  // Computes points from the energy comparison and credits the building's
  // site. Throws NoData when either period is empty.
  std::int64_t award_facility_points(const store::SeriesStore& store,
                                     const model::ResourceTree& tree,
                                     const std::string& building_id,
                                     const analytics::Period& window,
                                     const analytics::Period& baseline);

  std::vector<Standing> leaderboard(Scope scope) const;

  // One task per ISO week: Conflict when the week already has one.
  WeeklyTask create_weekly_task(const std::string& week, const std::string& description,
                                const std::string& hashtag);
  void submit(const std::string& task_id, const std::string& user, const std::string& content);
  std::vector<WeeklyTask> weekly_tasks() const;

  const CommunityConfig& config() const { return config_; }

 private:
  struct StudentState {
    std::string class_id;
    std::int64_t score = 0;
    std::set<std::string> completed;
  };
  struct SchoolCredit {
    std::int64_t points = 0;
    std::optional<Instant> last_at;
  };

  void apply_completion(const QuestCompletion& c);
  void check_badges(const std::string& class_id, Instant at);
  std::int64_t class_score_locked(const std::string& class_id) const;
  void persist(const std::string& collection, const std::string& id, const nlohmann::json& doc);
  void load();

  CommunityConfig config_;
  store::DocStore* docs_;
  Clock clock_;
  mutable std::mutex mutex_;
  std::map<std::string, std::int64_t> quest_points_;
  std::map<std::string, ClassDef> classes_;
  std::map<std::string, StudentState> students_;
  std::map<std::string, std::optional<Instant>> class_last_;
  std::vector<QuestCompletion> completions_;
  std::vector<Badge> badges_;
  std::map<std::string, SchoolCredit> school_credit_;
  std::size_t credit_count_ = 0;
  std::vector<WeeklyTask> tasks_;
};

}  // namespace gaia::engagement
