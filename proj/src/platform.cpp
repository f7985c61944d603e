#include "gaia/platform.hpp"

#include <spdlog/spdlog.h>

#include "gaia/error.hpp"

namespace gaia::service {

using nlohmann::json;

Platform::Platform(model::ResourceTree tree, PlatformOptions options,
                   engagement::CommunityConfig community, std::vector<model::User> users,
                   const std::vector<rules::RuleSpec>& initial_rules)
    : clock_(options.clock), tree_(std::move(tree)) {
  if (options.store_dir.empty()) {
    series_ = std::make_unique<store::SeriesStore>();
    docs_ = std::make_unique<store::DocStore>();
  } else {
    series_ = store::SeriesStore::open(options.store_dir / "series", options.store_options);
    docs_ = store::DocStore::open(options.store_dir / "docs", options.store_options);
  }
  apply_stored_meta();
  source_ = std::make_unique<rules::StoreMetricSource>(*series_, options.defaults.staleness_fallback);
  rules_ = std::make_unique<rules::RuleEngine>(
      *source_, rules::EngineConfig{options.defaults.dwell, options.defaults.cooldown_s},
      docs_.get());
  const auto snapshot = tree_.snapshot();
  rules_->load_persisted(*snapshot);
  // Rules edited at runtime win over the initial file on restart.
  for (const auto& spec : initial_rules) {
    if (!rules_->rule(spec.id)) rules_->install_rule(spec, *snapshot);
  }
  notifier_ = std::make_unique<notify::Notifier>(tree_, docs_.get(), clock_, options.notifier);
  ingestion_ = std::make_unique<ingest::Ingestion>(*series_, tree_, clock_);
  ingestion_->add_listener([this](const ingest::Reading& r) { dispatch(r); });
  engagement_ = std::make_unique<engagement::Engagement>(std::move(community), docs_.get(), clock_);
  for (auto& u : users) {
    if (u.role == model::Role::student && u.class_id) {
      try {
        engagement_->enroll(u.id, *u.class_id);
      } catch (const Error& e) {
        spdlog::warn("student {} not enrolled: {}", u.id, e.what());
      }
    }
    users_.add(std::move(u));
  }
}

Platform::~Platform() {
  if (notifier_) notifier_->close_all();
}

std::unique_ptr<Platform> Platform::from_config(const ServiceConfig& cfg, Clock clock) {
  PlatformOptions options;
  options.store_dir = cfg.store_dir;
  options.store_options.sync = cfg.sync_writes;
  options.defaults = cfg.defaults;
  options.clock = std::move(clock);
  return std::make_unique<Platform>(cfg.tree, options, cfg.community, cfg.users, cfg.rules);
}

void Platform::dispatch(const ingest::Reading& r) {
  readings_.fetch_add(1, std::memory_order_relaxed);
  for (const auto& ev : rules_->on_reading(r.resource_path, r.kind, r.timestamp)) {
    auto rule = rules_->rule(ev.rule_id);
    if (!rule) continue;
    try {
      notifier_->notify(ev, *rule);
      events_.fetch_add(1, std::memory_order_relaxed);
    } catch (const Error& e) {
      // The reading is already stored; a broken template must not undo that.
      dispatch_failures_.fetch_add(1, std::memory_order_relaxed);
      spdlog::error("rule {} fired but no notification was sent: {}", ev.rule_id, e.what());
    }
  }
}

void Platform::apply_stored_meta() {
  const auto stored = docs_->list("building_meta");
  if (stored.empty()) return;
  tree_.update([&](std::vector<model::NodeDef>& defs) {
    for (auto& def : defs) {
      for (const auto& [id, doc] : stored) {
        if (def.id == id && def.kind == model::NodeKind::building) {
          def.meta = doc.get<model::BuildingMeta>();
        }
      }
    }
  });
}

model::BuildingMeta Platform::update_building_meta(const std::string& building_id,
                                                   const model::BuildingMeta& meta,
                                                   const model::User& user) {
  const auto snapshot = tree_.snapshot();
  const model::ResourceNode* node = snapshot->find(building_id);
  if (!node || node->kind != model::NodeKind::building) {
    throw Error(Errc::not_found, "unknown building '" + building_id + "'");
  }
  if (!model::authorize(user, model::Action::configure_facility, *snapshot, *node)) {
    throw Error(Errc::unauthorized, "only the building manager may change building data");
  }
  model::validate(meta);
  if (!is_known_zone(meta.timezone)) {
    throw Error(Errc::validation_failed, "unknown time zone '" + meta.timezone + "'");
  }
  tree_.update([&](std::vector<model::NodeDef>& defs) {
    for (auto& def : defs) {
      if (def.id == building_id) def.meta = meta;
    }
  });
  docs_->put("building_meta", building_id, json(meta));
  return meta;
}

json Platform::health() const {
  json broken = json::array();
  for (const auto& b : rules_->broken_rules()) {
    broken.push_back(json{{"id", b.id}, {"reason", b.reason}});
  }
  const auto tree = tree_.snapshot();
  const bool rules_ok = broken.empty() && dispatch_failures_.load() == 0;
  return json{
      {"status", "ok"},
      {"modules",
       {{"core_model", {{"status", "ok"}, {"nodes", tree->size()}}},
        {"series_store",
         {{"status", "ok"},
          {"persistent", series_->persistent()},
          {"series", series_->list_series().size()}}},
        {"ingestion", {{"status", "ok"}, {"readings_dispatched", readings_.load()}}},
        {"rule_engine",
         {{"status", rules_ok ? "ok" : "degraded"},
          {"rules", rules_->rules().size()},
          {"broken_rules", broken},
          {"dispatch_failures", dispatch_failures_.load()}}},
        {"notifier",
         {{"status", "ok"},
          {"subscribers", notifier_->subscriber_count()},
          {"logged", notifier_->log_size()},
          {"events", events_.load()}}},
        {"engagement", {{"status", "ok"}, {"classes", engagement_->config().classes.size()}}}}}};
}

}  // namespace gaia::service
