#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaia/condition.hpp"
#include "gaia/model.hpp"
#include "gaia/sensor.hpp"
#include "gaia/time.hpp"

namespace gaia::store {
class SeriesStore;
class DocStore;
}  // namespace gaia::store

namespace gaia::rules {

struct Sample {
  double value = 0.0;
  Instant timestamp;

  friend bool operator==(const Sample&, const Sample&) = default;
};

// Read access to measurements keyed by (resource path, kind), merged across
// ingestion sources.
class MetricSource {
 public:
  virtual ~MetricSource() = default;
  // Samples with from < timestamp <= to, timestamp-sorted.
  virtual std::vector<Sample> samples(std::string_view path, SensorKind kind,
                                      Instant from, Instant to) const = 0;
  virtual std::optional<Sample> at_or_before(std::string_view path, SensorKind kind,
                                             Instant t) const = 0;
  // Oldest acceptable age of the latest sample.
  virtual Seconds staleness_horizon(std::string_view path, SensorKind kind) const = 0;
};

// Horizon is twice the longest nominal interval of the matching series, or
// `fallback` when none declares one.
class StoreMetricSource : public MetricSource {
 public:
  StoreMetricSource(const store::SeriesStore& store, Seconds fallback = Seconds{900})
      : store_(store), fallback_(fallback) {}

  std::vector<Sample> samples(std::string_view path, SensorKind kind, Instant from,
                              Instant to) const override;
  std::optional<Sample> at_or_before(std::string_view path, SensorKind kind,
                                     Instant t) const override;
  Seconds staleness_horizon(std::string_view path, SensorKind kind) const override;

 private:
  std::vector<std::string> series_for(std::string_view path, SensorKind kind) const;

  const store::SeriesStore& store_;
  Seconds fallback_;
};

struct SnapshotEntry {
  Sample sample;
  bool stale = false;
};

struct PresenceTrace {
  // The last sample at or before (taken_at - lookback) followed by every later
  // sample up to taken_at.
  std::vector<Sample> samples;
  Seconds horizon{900};
};

// Immutable view of the inputs one evaluation needs.
struct StateSnapshot {
  Instant taken_at;
  std::map<MetricRef, SnapshotEntry> metrics;
  std::map<std::pair<std::string, SensorKind>, PresenceTrace> presence;
};

StateSnapshot take_snapshot(const Condition& cond, const MetricSource& source, Instant now,
                            Seconds default_dwell);

// Missing or stale inputs make their leaf unknown; connectives are Kleene.
Truth evaluate(const Condition& cond, const StateSnapshot& snap, Seconds default_dwell);

// max(occupancy_count, activity_count) at `path` has stayed <= 0 for at least
// `dwell`; unknown when neither metric has usable data.
Truth empty_predicate(std::string_view path, const StateSnapshot& snap, Seconds dwell);

enum class Category { behavioral, alert, technical, renewal };

std::string_view to_string(Category c);
std::optional<Category> parse_category(std::string_view text);

struct Rule {
  std::string id;
  std::string name;
  std::string target;  // canonical resource path
  std::string condition_text;
  Condition condition;
  Category category = Category::behavioral;
  std::string suggestion_template;
  std::int64_t cooldown_s = 3600;
  bool enabled = true;
};

// Body accepted by upsert; the condition is kept as text and parsed against
// the tree at the rule's target.
struct RuleSpec {
  std::string id;
  std::string target;
  std::string name;
  std::string condition;
  Category category = Category::behavioral;
  std::string suggestion;
  std::optional<std::int64_t> cooldown_s;
  bool enabled = true;
};

nlohmann::json to_json(const Rule& rule);
// Reads `{name, condition, category, suggestion, cooldown_s, enabled}` plus
// optional id/target.
RuleSpec rule_spec_from_json(const nlohmann::json& j);

struct Binding {
  MetricRef metric;
  double value = 0.0;
  Instant timestamp;

  friend bool operator==(const Binding&, const Binding&) = default;
};

struct TriggerEvent {
  std::string rule_id;
  std::string target;
  Instant fired_at;
  std::vector<Binding> bindings;

  friend bool operator==(const TriggerEvent&, const TriggerEvent&) = default;
};

struct EngineConfig {
  Seconds default_dwell{900};
  std::int64_t default_cooldown_s = 3600;
};

struct BrokenRule {
  std::string id;
  std::string reason;
};

struct ListedRule {
  Rule rule;
  // Empty for rules attached to the queried resource itself.
  std::string inherited_from;
};

// Resolves condition paths relative to `target`, then to each ancestor, then
// from the roots.
PathResolver scoped_resolver(const model::ResourceTree& tree,
                             const model::ResourceNode& target);

// Edge-triggered rule evaluation. Rule CRUD publishes a new immutable rule
// set; readings evaluate against the set current when they arrive.
class RuleEngine {
 public:
  RuleEngine(const MetricSource& source, EngineConfig config = {},
             store::DocStore* docs = nullptr);

  // Throws Unauthorized, NotFound (target), SyntaxError, UnknownKind,
  // UnknownPath or ValidationFailed.
  Rule upsert_rule(const RuleSpec& spec, const model::User& user,
                   const model::ResourceTree& tree);
  // Authorization-free variant used for configuration bootstrap.
  Rule install_rule(const RuleSpec& spec, const model::ResourceTree& tree);
  void delete_rule(std::string_view id, const model::User& user,
                   const model::ResourceTree& tree);

  // Re-reads persisted rules; unparsable ones are reported by broken_rules().
  void load_persisted(const model::ResourceTree& tree);

  std::vector<TriggerEvent> on_reading(std::string_view path, SensorKind kind, Instant at);

  std::optional<Rule> rule(std::string_view id) const;
  std::vector<Rule> rules() const;
  // Rules attached to `path` and to its ancestors.
  std::vector<ListedRule> rules_for(const model::ResourceTree& tree,
                                    const model::ResourceNode& node) const;
  std::vector<BrokenRule> broken_rules() const;

  const EngineConfig& config() const { return config_; }

 private:
  struct RuleSet {
    std::map<std::string, Rule, std::less<>> rules;
    std::map<std::pair<std::string, SensorKind>, std::vector<std::string>> index;
  };
  struct RuleState {
    Truth last = Truth::no;
    std::optional<Instant> last_fired;
  };

  Rule compile(const RuleSpec& spec, const model::ResourceTree& tree) const;
  void publish(std::shared_ptr<RuleSet> next);
  std::shared_ptr<const RuleSet> current() const;
  void persist(const Rule& rule);

  const MetricSource& source_;
  EngineConfig config_;
  store::DocStore* docs_;

  mutable std::mutex set_mutex_;
  std::shared_ptr<const RuleSet> rules_;
  std::mutex write_mutex_;

  std::mutex eval_mutex_;
  std::map<std::string, RuleState, std::less<>> state_;

  mutable std::mutex broken_mutex_;
  std::vector<BrokenRule> broken_;
};

}  // namespace gaia::rules
