#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gaia/engagement.hpp"
#include "gaia/error.hpp"
#include "gaia/model.hpp"
#include "gaia/rule_engine.hpp"

namespace gaia::service {

struct Defaults {
  Seconds staleness_fallback{900};
  Seconds dwell{900};
  std::int64_t cooldown_s = 3600;
};

struct ServiceConfig {
  std::filesystem::path source;  // the config file itself
  std::string host = "127.0.0.1";
  std::uint16_t port = 8080;
  std::filesystem::path store_dir;
  std::filesystem::path tree_file;
  std::filesystem::path rules_file;   // optional
  std::filesystem::path quests_file;  // optional: quests, classes, badges
  std::filesystem::path users_file;   // optional
  Defaults defaults;
  std::string log_level = "info";
  bool sync_writes = false;

  // Parsed contents of the referenced files.
  model::ResourceTree tree;
  std::vector<rules::RuleSpec> rules;
  engagement::CommunityConfig community;
  std::vector<model::User> users;
};

struct ConfigIssue {
  std::string file;
  std::string location;  // "line 3, column 7", a JSON pointer, or empty
  std::string message;
};

std::string to_string(const ConfigIssue& issue);

// Carries every problem found, not just the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<ConfigIssue> issues);
  const std::vector<ConfigIssue>& issues() const { return issues_; }

 private:
  std::vector<ConfigIssue> issues_;
};

// Relative paths are resolved against the config file's directory.
// Throws ConfigError.
ServiceConfig load_config(const std::filesystem::path& path);

}  // namespace gaia::service
