#include "gaia/rule_engine.hpp"

#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

#include "gaia/error.hpp"
#include "gaia/numeric.hpp"
#include "gaia/series_store.hpp"
#include "gaia/text_template.hpp"

namespace gaia::rules {

using nlohmann::json;

namespace {

constexpr std::array kPresenceKinds = {SensorKind::occupancy_count, SensorKind::activity_count};

const std::set<std::string, std::less<>> kTemplateFields = {"metric", "value", "resource"};

}  // namespace

// ---------------------------------------------------------------------------
// Metric access

std::vector<std::string> StoreMetricSource::series_for(std::string_view path,
                                                       SensorKind kind) const {
  std::vector<std::string> ids;
  for (store::Source src : {store::Source::iot, store::Source::manual, store::Source::file}) {
    if (auto meta = store_.find_series(path, kind, src); meta && !meta->cumulative) {
      ids.push_back(meta->series_id);
    }
  }
  return ids;
}

std::vector<Sample> StoreMetricSource::samples(std::string_view path, SensorKind kind,
                                               Instant from, Instant to) const {
  std::vector<Sample> out;
  if (!(from < to)) return out;
  for (const auto& id : series_for(path, kind)) {
    for (const auto& p : store_.query_range(id, from + Seconds{1}, to + Seconds{1})) {
      out.push_back(Sample{p.value, p.timestamp});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Sample& a, const Sample& b) { return a.timestamp < b.timestamp; });
  return out;
}

std::optional<Sample> StoreMetricSource::at_or_before(std::string_view path, SensorKind kind,
                                                      Instant t) const {
  std::optional<Sample> best;
  for (const auto& id : series_for(path, kind)) {
    if (auto p = store_.at_or_before(id, t); p && (!best || p->timestamp > best->timestamp)) {
      best = Sample{p->value, p->timestamp};
    }
  }
  return best;
}

Seconds StoreMetricSource::staleness_horizon(std::string_view path, SensorKind kind) const {
  std::int64_t longest = 0;
  for (store::Source src : {store::Source::iot, store::Source::manual, store::Source::file}) {
    if (auto meta = store_.find_series(path, kind, src); meta && meta->nominal_interval_s) {
      longest = std::max(longest, *meta->nominal_interval_s);
    }
  }
  return longest > 0 ? Seconds{2 * longest} : fallback_;
}

// ---------------------------------------------------------------------------
// Snapshot and evaluation

StateSnapshot take_snapshot(const Condition& cond, const MetricSource& source, Instant now,
                            Seconds default_dwell) {
  StateSnapshot snap;
  snap.taken_at = now;
  std::map<std::string, Seconds> lookback;
  for_each_leaf(
      cond,
      [&](const Comparison& c) {
        const MetricRef& ref = c.metric;
        if (snap.metrics.contains(ref)) return;
        const Seconds horizon = source.staleness_horizon(ref.path, ref.kind);
        if (!ref.window) {
          if (auto s = source.at_or_before(ref.path, ref.kind, now)) {
            snap.metrics.emplace(ref, SnapshotEntry{*s, now - s->timestamp > horizon});
          }
          return;
        }
        const auto pts =
            source.samples(ref.path, ref.kind, now - Seconds{ref.window->duration_s}, now);
        if (pts.empty()) return;
        ExactSum sum;
        double lo = pts.front().value;
        double hi = pts.front().value;
        for (const auto& p : pts) {
          sum.add(p.value);
          lo = std::min(lo, p.value);
          hi = std::max(hi, p.value);
        }
        double value = 0.0;
        switch (ref.window->agg) {
          case WindowAgg::mean: value = sum.value() / static_cast<double>(pts.size()); break;
          case WindowAgg::sum: value = sum.value(); break;
          case WindowAgg::min: value = lo; break;
          case WindowAgg::max: value = hi; break;
        }
        const Instant last = pts.back().timestamp;
        snap.metrics.emplace(ref, SnapshotEntry{Sample{value, last}, now - last > horizon});
      },
      [&](const EmptyCheck& e) {
        const Seconds dwell = e.dwell_s ? Seconds{*e.dwell_s} : default_dwell;
        auto [it, inserted] = lookback.emplace(e.path, dwell);
        if (!inserted) it->second = std::max(it->second, dwell);
      });

  for (const auto& [path, span] : lookback) {
    for (SensorKind kind : kPresenceKinds) {
      PresenceTrace trace;
      trace.horizon = source.staleness_horizon(path, kind);
      const Instant cutoff = now - span;
      if (auto g = source.at_or_before(path, kind, cutoff)) trace.samples.push_back(*g);
      for (const auto& s : source.samples(path, kind, cutoff, now)) trace.samples.push_back(s);
      snap.presence.emplace(std::make_pair(path, kind), std::move(trace));
    }
  }
  return snap;
}

Truth empty_predicate(std::string_view path, const StateSnapshot& snap, Seconds dwell) {
  bool available = false;
  bool all_quiet = true;
  const Instant cutoff = snap.taken_at - dwell;
  for (SensorKind kind : kPresenceKinds) {
    auto it = snap.presence.find(std::make_pair(std::string(path), kind));
    if (it == snap.presence.end() || it->second.samples.empty()) continue;
    const auto& samples = it->second.samples;
    if (snap.taken_at - samples.back().timestamp > it->second.horizon) continue;
    available = true;
    std::optional<Sample> governing;
    bool active = false;
    for (const auto& s : samples) {
      if (s.timestamp <= cutoff) {
        governing = s;
      } else if (s.timestamp <= snap.taken_at && s.value > 0.0) {
        active = true;
      }
    }
    if (!governing || governing->value > 0.0 || active) all_quiet = false;
  }
  if (!available) return Truth::unknown;
  return all_quiet ? Truth::yes : Truth::no;
}

Truth evaluate(const Condition& cond, const StateSnapshot& snap, Seconds default_dwell) {
  return std::visit(
      [&](const auto& n) -> Truth {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Comparison>) {
          auto it = snap.metrics.find(n.metric);
          if (it == snap.metrics.end() || it->second.stale) return Truth::unknown;
          return compare(it->second.sample.value, n.op, n.literal) ? Truth::yes : Truth::no;
        } else if constexpr (std::is_same_v<T, EmptyCheck>) {
          return empty_predicate(n.path, snap, n.dwell_s ? Seconds{*n.dwell_s} : default_dwell);
        } else if constexpr (std::is_same_v<T, Not>) {
          return !evaluate(*n.operand, snap, default_dwell);
        } else if constexpr (std::is_same_v<T, And>) {
          return evaluate(*n.lhs, snap, default_dwell) && evaluate(*n.rhs, snap, default_dwell);
        } else {
          return evaluate(*n.lhs, snap, default_dwell) || evaluate(*n.rhs, snap, default_dwell);
        }
      },
      cond.node);
}

// ---------------------------------------------------------------------------
// Rules

std::string_view to_string(Category c) {
  switch (c) {
    case Category::behavioral: return "behavioral";
    case Category::alert: return "alert";
    case Category::technical: return "technical";
    case Category::renewal: return "renewal";
  }
  return "?";
}

std::optional<Category> parse_category(std::string_view text) {
  for (Category c : {Category::behavioral, Category::alert, Category::technical,
                     Category::renewal}) {
    if (to_string(c) == text) return c;
  }
  return std::nullopt;
}

json to_json(const Rule& rule) {
  return json{{"id", rule.id},
              {"name", rule.name},
              {"target", rule.target},
              {"condition", rule.condition_text},
              {"category", to_string(rule.category)},
              {"suggestion", rule.suggestion_template},
              {"cooldown_s", rule.cooldown_s},
              {"enabled", rule.enabled}};
}

RuleSpec rule_spec_from_json(const json& j) {
  if (!j.is_object()) throw Error(Errc::validation_failed, "rule body must be an object");
  RuleSpec spec;
  try {
    spec.id = j.value("id", std::string{});
    spec.target = j.value("target", std::string{});
    spec.name = j.value("name", std::string{});
    spec.condition = j.at("condition").get<std::string>();
    const auto category = j.value("category", std::string("behavioral"));
    auto parsed = parse_category(category);
    if (!parsed) throw Error(Errc::validation_failed, "unknown category '" + category + "'");
    spec.category = *parsed;
    spec.suggestion = j.value("suggestion", std::string{});
    if (j.contains("cooldown_s") && !j["cooldown_s"].is_null()) {
      spec.cooldown_s = j["cooldown_s"].get<std::int64_t>();
    }
    spec.enabled = j.value("enabled", true);
  } catch (const json::exception& e) {
    throw Error(Errc::validation_failed, std::string("bad rule body: ") + e.what());
  }
  return spec;
}

PathResolver scoped_resolver(const model::ResourceTree& tree,
                             const model::ResourceNode& target) {
  return [&tree, &target](std::string_view raw) -> std::optional<std::string> {
    for (const model::ResourceNode* base = &target; base; base = tree.parent_of(*base)) {
      const std::string candidate = tree.canonical_path(*base) + "/" + std::string(raw);
      if (const auto* n = tree.try_resolve(candidate)) return tree.canonical_path(*n);
    }
    if (const auto* n = tree.try_resolve(raw)) return tree.canonical_path(*n);
    return std::nullopt;
  };
}

RuleEngine::RuleEngine(const MetricSource& source, EngineConfig config, store::DocStore* docs)
    : source_(source),
      config_(config),
      docs_(docs),
      rules_(std::make_shared<const RuleSet>()) {}

namespace {

bool valid_rule_id(std::string_view id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
  });
}

}  // namespace

Rule RuleEngine::compile(const RuleSpec& spec, const model::ResourceTree& tree) const {
  if (!valid_rule_id(spec.id)) {
    throw Error(Errc::validation_failed, "rule id must be [A-Za-z0-9_-]+");
  }
  const model::ResourceNode* node = tree.try_resolve(spec.target);
  if (!node) throw Error(Errc::not_found, "unknown rule target '" + spec.target + "'");
  if (spec.name.empty()) throw Error(Errc::validation_failed, "rule name is empty");
  if (spec.suggestion.empty()) {
    throw Error(Errc::validation_failed, "rule suggestion is empty");
  }
  try {
    for (const auto& field : template_placeholders(spec.suggestion)) {
      if (!kTemplateFields.contains(field)) {
        throw Error(Errc::template_error, "unknown placeholder {" + field + "}");
      }
    }
  } catch (const Error& e) {
    throw Error(Errc::validation_failed, std::string("suggestion: ") + e.what());
  }

  Rule rule;
  rule.id = spec.id;
  rule.name = spec.name;
  rule.target = tree.canonical_path(*node);
  rule.condition = parse_condition(spec.condition, scoped_resolver(tree, *node));
  rule.condition_text = to_text(rule.condition);
  rule.category = spec.category;
  rule.suggestion_template = spec.suggestion;
  rule.cooldown_s = spec.cooldown_s.value_or(config_.default_cooldown_s);
  rule.enabled = spec.enabled;
  if (rule.cooldown_s < 0) throw Error(Errc::validation_failed, "cooldown_s must be >= 0");

  auto check_scope = [&](const std::string& path) {
    const model::ResourceNode& ref = tree.resolve_path(path);
    if (!tree.is_ancestor_or_self(ref, *node) && !tree.is_ancestor_or_self(*node, ref)) {
      throw Error(Errc::validation_failed,
                  "condition references " + path + ", which is neither above nor under " +
                      rule.target);
    }
  };
  for_each_leaf(
      rule.condition, [&](const Comparison& c) { check_scope(c.metric.path); },
      [&](const EmptyCheck& e) { check_scope(e.path); });
  return rule;
}

std::shared_ptr<const RuleEngine::RuleSet> RuleEngine::current() const {
  std::lock_guard lock(set_mutex_);
  return rules_;
}

void RuleEngine::publish(std::shared_ptr<RuleSet> next) {
  next->index.clear();
  for (const auto& [id, rule] : next->rules) {
    std::set<std::pair<std::string, SensorKind>> keys;
    for_each_leaf(
        rule.condition, [&](const Comparison& c) { keys.emplace(c.metric.path, c.metric.kind); },
        [&](const EmptyCheck& e) {
          for (SensorKind k : kPresenceKinds) keys.emplace(e.path, k);
        });
    for (const auto& key : keys) next->index[key].push_back(id);
  }
  std::lock_guard lock(set_mutex_);
  rules_ = std::move(next);
}

void RuleEngine::persist(const Rule& rule) {
  if (docs_) docs_->put("rules", rule.id, to_json(rule));
}

Rule RuleEngine::install_rule(const RuleSpec& spec, const model::ResourceTree& tree) {
  Rule rule = compile(spec, tree);
  std::lock_guard writer(write_mutex_);
  auto next = std::make_shared<RuleSet>(*current());
  bool reset = true;
  if (auto it = next->rules.find(rule.id); it != next->rules.end()) {
    if (it->second.target != rule.target) {
      throw Error(Errc::validation_failed,
                  "rule '" + rule.id + "' is attached to " + it->second.target);
    }
    reset = it->second.condition_text != rule.condition_text;
  }
  persist(rule);
  next->rules.insert_or_assign(rule.id, rule);
  {
    std::lock_guard eval(eval_mutex_);
    if (reset) state_.erase(rule.id);
  }
  publish(std::move(next));
  {
    std::lock_guard lock(broken_mutex_);
    std::erase_if(broken_, [&](const BrokenRule& b) { return b.id == rule.id; });
  }
  return rule;
}

Rule RuleEngine::upsert_rule(const RuleSpec& spec, const model::User& user,
                             const model::ResourceTree& tree) {
  const model::ResourceNode* node = tree.try_resolve(spec.target);
  if (!node) throw Error(Errc::not_found, "unknown rule target '" + spec.target + "'");
  if (!model::authorize(user, model::Action::edit_rule, tree, *node)) {
    throw Error(Errc::unauthorized, "user '" + user.id + "' may not edit rules on " +
                                        tree.canonical_path(*node));
  }
  return install_rule(spec, tree);
}

void RuleEngine::delete_rule(std::string_view id, const model::User& user,
                             const model::ResourceTree& tree) {
  std::lock_guard writer(write_mutex_);
  auto base = current();
  auto it = base->rules.find(id);
  if (it == base->rules.end()) {
    throw Error(Errc::not_found, "no rule '" + std::string(id) + "'");
  }
  const model::ResourceNode* node = tree.try_resolve(it->second.target);
  if (!node || !model::authorize(user, model::Action::edit_rule, tree, *node)) {
    throw Error(Errc::unauthorized,
                "user '" + user.id + "' may not edit rules on " + it->second.target);
  }
  if (docs_) docs_->remove("rules", std::string(id));
  auto next = std::make_shared<RuleSet>(*base);
  next->rules.erase(std::string(id));
  {
    std::lock_guard eval(eval_mutex_);
    state_.erase(std::string(id));
  }
  publish(std::move(next));
}

void RuleEngine::load_persisted(const model::ResourceTree& tree) {
  if (!docs_) return;
  std::lock_guard writer(write_mutex_);
  auto next = std::make_shared<RuleSet>();
  std::vector<BrokenRule> broken;
  for (const auto& [id, doc] : docs_->list("rules")) {
    try {
      RuleSpec spec = rule_spec_from_json(doc);
      spec.id = id;
      next->rules.insert_or_assign(id, compile(spec, tree));
    } catch (const std::exception& e) {
      spdlog::warn("rule {} skipped: {}", id, e.what());
      broken.push_back(BrokenRule{id, e.what()});
    }
  }
  publish(std::move(next));
  std::lock_guard lock(broken_mutex_);
  broken_ = std::move(broken);
}

std::vector<TriggerEvent> RuleEngine::on_reading(std::string_view path, SensorKind kind,
                                                 Instant at) {
  std::vector<TriggerEvent> events;
  const auto set = current();
  auto hit = set->index.find(std::make_pair(std::string(path), kind));
  if (hit == set->index.end()) return events;

  std::lock_guard lock(eval_mutex_);
  for (const auto& id : hit->second) {
    const Rule& rule = set->rules.at(id);
    if (!rule.enabled) continue;
    const StateSnapshot snap = take_snapshot(rule.condition, source_, at, config_.default_dwell);
    const Truth truth = evaluate(rule.condition, snap, config_.default_dwell);
    if (truth == Truth::unknown) continue;
    RuleState& st = state_[id];
    const bool rising = truth == Truth::yes && st.last != Truth::yes;
    st.last = truth;
    if (!rising) continue;
    if (st.last_fired && at - *st.last_fired < Seconds{rule.cooldown_s}) {
      spdlog::debug("rule {} suppressed by cooldown", id);
      continue;
    }
    st.last_fired = at;

    TriggerEvent ev;
    ev.rule_id = rule.id;
    ev.target = rule.target;
    ev.fired_at = at;
    auto bind = [&](const MetricRef& ref, const Sample& s) {
      const bool seen = std::any_of(ev.bindings.begin(), ev.bindings.end(),
                                    [&](const Binding& b) { return b.metric == ref; });
      if (!seen) ev.bindings.push_back(Binding{ref, s.value, s.timestamp});
    };
    // Threshold metrics first, so {metric}/{value} name what crossed a limit.
    for_each_leaf(
        rule.condition,
        [&](const Comparison& c) {
          auto e = snap.metrics.find(c.metric);
          if (e != snap.metrics.end() && !e->second.stale) bind(c.metric, e->second.sample);
        },
        {});
    for_each_leaf(rule.condition, {}, [&](const EmptyCheck& e) {
      for (SensorKind k : kPresenceKinds) {
        auto trace = snap.presence.find(std::make_pair(e.path, k));
        if (trace != snap.presence.end() && !trace->second.samples.empty()) {
          bind(MetricRef{e.path, k, std::nullopt}, trace->second.samples.back());
        }
      }
    });
    events.push_back(std::move(ev));
  }
  return events;
}

std::optional<Rule> RuleEngine::rule(std::string_view id) const {
  const auto set = current();
  auto it = set->rules.find(id);
  if (it == set->rules.end()) return std::nullopt;
  return it->second;
}

std::vector<Rule> RuleEngine::rules() const {
  std::vector<Rule> out;
  for (const auto& [_, r] : current()->rules) out.push_back(r);
  return out;
}

std::vector<ListedRule> RuleEngine::rules_for(const model::ResourceTree& tree,
                                              const model::ResourceNode& node) const {
  std::vector<ListedRule> out;
  const std::string& path = tree.canonical_path(node);
  for (const auto& [_, r] : current()->rules) {
    const model::ResourceNode* target = tree.try_resolve(r.target);
    if (!target || !tree.is_ancestor_or_self(*target, node)) continue;
    out.push_back(ListedRule{r, r.target == path ? std::string{} : r.target});
  }
  return out;
}

std::vector<BrokenRule> RuleEngine::broken_rules() const {
  std::lock_guard lock(broken_mutex_);
  return broken_;
}

}  // namespace gaia::rules
