#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaia/config.hpp"
#include "gaia/engagement.hpp"
#include "gaia/ingestion.hpp"
#include "gaia/model.hpp"
#include "gaia/notifier.hpp"
#include "gaia/rule_engine.hpp"
#include "gaia/series_store.hpp"

namespace gaia::service {

struct PlatformOptions {
  std::filesystem::path store_dir;  // empty keeps everything in memory
  store::StoreOptions store_options;
  Defaults defaults;
  Clock clock = system_clock();
  notify::NotifierConfig notifier;
};

// Wires the modules together without any networking: accepted readings are
// evaluated by the rule engine and resulting events go to the notifier.
class Platform {
 public:
  Platform(model::ResourceTree tree, PlatformOptions options,
           engagement::CommunityConfig community = {}, std::vector<model::User> users = {},
           const std::vector<rules::RuleSpec>& initial_rules = {});
  ~Platform();

  static std::unique_ptr<Platform> from_config(const ServiceConfig& cfg, Clock clock = system_clock());

  model::TreeRegistry& tree() { return tree_; }
  store::SeriesStore& series() { return *series_; }
  store::DocStore& docs() { return *docs_; }
  rules::RuleEngine& rules() { return *rules_; }
  notify::Notifier& notifier() { return *notifier_; }
  ingest::Ingestion& ingestion() { return *ingestion_; }
  engagement::Engagement& engagement() { return *engagement_; }
  const model::UserDirectory& users() const { return users_; }
  const Clock& clock() const { return clock_; }

  const model::User* user(std::string_view id) const { return users_.find(id); }

  // Requires configure_facility on the building. Throws NotFound,
  // Unauthorized, ValidationFailed.
  model::BuildingMeta update_building_meta(const std::string& building_id,
                                           const model::BuildingMeta& meta,
                                           const model::User& user);

  nlohmann::json health() const;

 private:
  void dispatch(const ingest::Reading& r);
  void apply_stored_meta();

  Clock clock_;
  model::TreeRegistry tree_;
  std::unique_ptr<store::SeriesStore> series_;
  std::unique_ptr<store::DocStore> docs_;
  std::unique_ptr<rules::StoreMetricSource> source_;
  std::unique_ptr<rules::RuleEngine> rules_;
  std::unique_ptr<notify::Notifier> notifier_;
  std::unique_ptr<ingest::Ingestion> ingestion_;
  std::unique_ptr<engagement::Engagement> engagement_;
  model::UserDirectory users_;
  std::atomic<std::uint64_t> readings_{0};
  std::atomic<std::uint64_t> events_{0};
  std::atomic<std::uint64_t> dispatch_failures_{0};
};

}  // namespace gaia::service
