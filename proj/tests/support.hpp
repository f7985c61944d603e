#pragma once

#include <cstdlib>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaia/model.hpp"
#include "gaia/rule_engine.hpp"
#include "gaia/time.hpp"

namespace gaia::testing {

// Removes itself on destruction.
class TempDir {
 public:
  TempDir() {
    std::string templ = (std::filesystem::temp_directory_path() / "gaia-test-XXXXXX").string();
    if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline model::BuildingMeta school_meta(double surface, std::string type = "secondary-school",
                                       std::string tz = "UTC") {
  model::BuildingMeta m;
  m.surface_m2 = surface;
  m.energy_types = {model::EnergyType::electricity, model::EnergyType::heating_fuel};
  m.building_type = std::move(type);
  m.construction_year = 1978;
  m.occupant_count = 300;
  m.timezone = std::move(tz);
  return m;
}

// site1 / buildingA / floor2 / {lab-x, class-1}, buildingA / meter-a,
// site1 / buildingB / floor1 / room-1.
inline std::vector<model::NodeDef> school_defs(std::string tz = "UTC") {
  using K = model::NodeKind;
  return {
      {"site1", K::site, "site1", std::nullopt, std::nullopt},
      {"bA", K::building, "buildingA", "site1", school_meta(1200, "secondary-school", tz)},
      {"bA-f2", K::floor, "floor2", "bA", std::nullopt},
      {"lab-x", K::room, "lab-x", "bA-f2", std::nullopt},
      {"class-1", K::room, "class-1", "bA-f2", std::nullopt},
      {"meter-a", K::meter, "meter-a", "bA", std::nullopt},
      {"bB", K::building, "buildingB", "site1", school_meta(1000, "secondary-school", tz)},
      {"bB-f1", K::floor, "floor1", "bB", std::nullopt},
      {"room-1", K::room, "room-1", "bB-f1", std::nullopt},
  };
}

inline model::ResourceTree school_tree(std::string tz = "UTC") {
  return model::build_resource_tree(school_defs(std::move(tz)));
}

inline model::User manager(std::string id = "mgr-a", std::string building = "bA") {
  return model::User{std::move(id), model::Role::building_manager, std::nullopt, {std::move(building)}};
}
inline model::User teacher(std::string id = "t1", std::string cls = "c1") {
  return model::User{std::move(id), model::Role::teacher, std::move(cls), {"bA"}};
}
inline model::User student(std::string id = "s1", std::string cls = "c1") {
  return model::User{std::move(id), model::Role::student, std::move(cls), {"bA"}};
}

inline Instant at(const char* text) { return parse_instant(text); }

inline nlohmann::json lights_rule_json() {
  return nlohmann::json{{"id", "lights-off"},
                        {"target", "site1/buildingA/floor2/lab-x"},
                        {"name", "Turn-off the light"},
                        {"condition", "empty(lab-x) AND light(lab-x) is on"},
                        {"category", "behavioral"},
                        {"suggestion", "Turn-off the light when leaving"},
                        {"cooldown_s", 3600}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream(path) << j.dump(2);
}

// Tree, users, rules and community files plus a config pointing at them.
inline std::filesystem::path write_service_files(const std::filesystem::path& dir,
                                                 const std::string& listen = "127.0.0.1:0",
                                                 std::string tz = "UTC") {
  write_json(dir / "tree.json", model::tree_to_json(school_tree(std::move(tz))));
  nlohmann::json users = nlohmann::json::array();
  for (const auto& u : {manager(), manager("mgr-b", "bB"), teacher(), student(), student("s2")}) {
    users.push_back(u);
  }
  write_json(dir / "users.json", users);
  write_json(dir / "rules.json", nlohmann::json::array({lights_rule_json()}));
  write_json(dir / "quests.json", nlohmann::json::parse(R"({
    "quests": [{"id": "q-lights", "points": 40}, {"id": "q-quiz", "points": 150}],
    "classes": [{"id": "c1", "school": "site1"}, {"id": "c2", "school": "site1"}]
  })"));
  write_json(dir / "config.json", nlohmann::json{{"listen", listen},
                                                 {"store_dir", "data"},
                                                 {"tree_file", "tree.json"},
                                                 {"users_file", "users.json"},
                                                 {"rules_file", "rules.json"},
                                                 {"quests_file", "quests.json"},
                                                 {"log_level", "warn"}});
  return dir / "config.json";
}

// In-memory metric source for evaluating conditions without a store.
class FakeMetrics : public rules::MetricSource {
 public:
  void add(std::string path, SensorKind kind, Instant t, double v) {
    auto& s = data_[{std::move(path), kind}];
    s.push_back(rules::Sample{v, t});
    std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  }
  void clear() { data_.clear(); }
  Seconds horizon{900};

  std::vector<rules::Sample> samples(std::string_view path, SensorKind kind, Instant from,
                                     Instant to) const override {
    std::vector<rules::Sample> out;
    auto it = data_.find({std::string(path), kind});
    if (it == data_.end()) return out;
    for (const auto& s : it->second) {
      if (s.timestamp > from && s.timestamp <= to) out.push_back(s);
    }
    return out;
  }
  std::optional<rules::Sample> at_or_before(std::string_view path, SensorKind kind,
                                            Instant t) const override {
    auto it = data_.find({std::string(path), kind});
    if (it == data_.end()) return std::nullopt;
    std::optional<rules::Sample> best;
    for (const auto& s : it->second) {
      if (s.timestamp <= t) best = s;
    }
    return best;
  }
  Seconds staleness_horizon(std::string_view, SensorKind) const override { return horizon; }

 private:
  std::map<std::pair<std::string, SensorKind>, std::vector<rules::Sample>> data_;
};

}  // namespace gaia::testing
