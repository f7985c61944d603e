#include "gaia/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace gaia::service {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(const ConfigIssue& issue) {
  std::string out = issue.file;
  if (!issue.location.empty()) out += " (" + issue.location + ")";
  return out + ": " + issue.message;
}

namespace {

std::string summarize(const std::vector<ConfigIssue>& issues) {
  std::string out = std::to_string(issues.size()) + " configuration error" +
                    (issues.size() == 1 ? "" : "s");
  for (const auto& i : issues) out += "\n  " + to_string(i);
  return out;
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

class Collector {
 public:
  void add(const fs::path& file, std::string location, std::string message) {
    issues.push_back({file.string(), std::move(location), std::move(message)});
  }

  // Reads and parses a JSON file; records the failure and returns null.
  std::optional<json> read_json(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
      add(file, "", "cannot open file");
      return std::nullopt;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      std::string what = e.what();
      if (auto pos = what.find("parse error"); pos != std::string::npos) what = what.substr(pos);
      add(file, line_col(text, e.byte > 0 ? e.byte - 1 : 0), what);
      return std::nullopt;
    }
  }

  std::vector<ConfigIssue> issues;
};

fs::path resolve(const fs::path& base, const std::string& value) {
  fs::path p(value);
  return p.is_absolute() ? p : base / p;
}

}  // namespace

ConfigError::ConfigError(std::vector<ConfigIssue> issues)
    : Error(Errc::parse_error, summarize(issues)), issues_(std::move(issues)) {}

ServiceConfig load_config(const fs::path& path) {
  Collector c;
  ServiceConfig cfg;
  cfg.source = path;
  auto doc = c.read_json(path);
  if (!doc) throw ConfigError(std::move(c.issues));
  if (!doc->is_object()) {
    c.add(path, "/", "configuration must be a JSON object");
    throw ConfigError(std::move(c.issues));
  }
  const fs::path base = path.has_parent_path() ? path.parent_path() : fs::path(".");

  auto string_field = [&](const char* key, bool required) -> std::optional<std::string> {
    if (!doc->contains(key)) {
      if (required) c.add(path, std::string("/") + key, "missing required field");
      return std::nullopt;
    }
    const auto& v = (*doc)[key];
    if (!v.is_string() || v.get<std::string>().empty()) {
      c.add(path, std::string("/") + key, "must be a non-empty string");
      return std::nullopt;
    }
    return v.get<std::string>();
  };

  for (const auto& [key, value] : doc->items()) {
    static const std::set<std::string> known{"listen",     "store_dir",  "tree_file",
                                             "rules_file", "quests_file", "users_file",
                                             "defaults",   "log_level",  "sync_writes"};
    if (!known.count(key)) c.add(path, "/" + key, "unknown field");
  }

  if (auto listen = string_field("listen", false)) {
    const auto colon = listen->rfind(':');
    unsigned port = 0;
    const char* first = listen->data() + (colon == std::string::npos ? 0 : colon + 1);
    const char* last = listen->data() + listen->size();
    auto [ptr, ec] = std::from_chars(first, last, port);
    if (colon == std::string::npos || colon == 0 || ec != std::errc{} || ptr != last ||
        port > 65535) {
      c.add(path, "/listen", "expected HOST:PORT, got '" + *listen + "'");
    } else {
      cfg.host = listen->substr(0, colon);
      cfg.port = static_cast<std::uint16_t>(port);
    }
  }
  if (auto dir = string_field("store_dir", true)) {
    cfg.store_dir = resolve(base, *dir);
    std::error_code ec;
    if (fs::exists(cfg.store_dir, ec) && !fs::is_directory(cfg.store_dir, ec)) {
      c.add(path, "/store_dir", cfg.store_dir.string() + " is not a directory");
    }
  }
  if (auto level = string_field("log_level", false)) {
    static const std::set<std::string> levels{"trace", "debug", "info", "warn",
                                              "error", "critical", "off"};
    if (!levels.count(*level)) {
      c.add(path, "/log_level", "unknown log level '" + *level + "'");
    } else {
      cfg.log_level = *level;
    }
  }
  if (doc->contains("sync_writes")) {
    if ((*doc)["sync_writes"].is_boolean()) {
      cfg.sync_writes = (*doc)["sync_writes"].get<bool>();
    } else {
      c.add(path, "/sync_writes", "must be true or false");
    }
  }
  if (doc->contains("defaults")) {
    const auto& d = (*doc)["defaults"];
    auto seconds = [&](const char* key, bool allow_zero) -> std::optional<std::int64_t> {
      if (!d.contains(key)) return std::nullopt;
      const auto& v = d[key];
      if (!v.is_number_integer() || v.get<std::int64_t>() < (allow_zero ? 0 : 1)) {
        c.add(path, std::string("/defaults/") + key,
              allow_zero ? "must be a non-negative integer" : "must be a positive integer");
        return std::nullopt;
      }
      return v.get<std::int64_t>();
    };
    if (!d.is_object()) {
      c.add(path, "/defaults", "must be an object");
    } else {
      if (auto v = seconds("staleness_fallback_s", false)) cfg.defaults.staleness_fallback = Seconds{*v};
      if (auto v = seconds("dwell_s", false)) cfg.defaults.dwell = Seconds{*v};
      if (auto v = seconds("cooldown_s", true)) cfg.defaults.cooldown_s = *v;
    }
  }

  bool tree_ok = false;
  if (auto file = string_field("tree_file", true)) {
    cfg.tree_file = resolve(base, *file);
    if (auto tree = c.read_json(cfg.tree_file)) {
      try {
        cfg.tree = model::tree_from_json(*tree);
        tree_ok = true;
      } catch (const Error& e) {
        c.add(cfg.tree_file, "", std::string(to_string(e.code())) + ": " + e.what());
      }
    }
  }
  if (auto file = string_field("users_file", false)) {
    cfg.users_file = resolve(base, *file);
    if (auto users = c.read_json(cfg.users_file)) {
      const json& list = users->is_object() ? users->value("users", json::array()) : *users;
      for (std::size_t i = 0; i < list.size(); ++i) {
        try {
          auto u = list[i].get<model::User>();
          model::validate(u);
          cfg.users.push_back(std::move(u));
        } catch (const std::exception& e) {
          c.add(cfg.users_file, "user #" + std::to_string(i + 1), e.what());
        }
      }
    }
  }
  if (auto file = string_field("quests_file", false)) {
    cfg.quests_file = resolve(base, *file);
    if (auto community = c.read_json(cfg.quests_file)) {
      try {
        cfg.community = engagement::community_from_json(*community);
        if (tree_ok) {
          for (const auto& cls : cfg.community.classes) {
            const auto* school = cfg.tree.find(cls.school);
            if (!school || school->kind != model::NodeKind::site) {
              c.add(cfg.quests_file, "class " + cls.id, "school '" + cls.school + "' is not a site");
            }
          }
        }
      } catch (const Error& e) {
        c.add(cfg.quests_file, "", e.what());
      }
    }
  }
  if (auto file = string_field("rules_file", false)) {
    cfg.rules_file = resolve(base, *file);
    if (auto rules = c.read_json(cfg.rules_file)) {
      const json& list = rules->is_object() ? rules->value("rules", json::array()) : *rules;
      // Compiling against a scratch engine reports bad conditions at startup.
      store::SeriesStore scratch_store;
      rules::StoreMetricSource scratch_source(scratch_store);
      rules::RuleEngine scratch(scratch_source);
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string where = "rule #" + std::to_string(i + 1);
        try {
          auto spec = rules::rule_spec_from_json(list[i]);
          if (spec.id.empty() || spec.target.empty()) {
            c.add(cfg.rules_file, where, "rules in the rules file need an id and a target");
            continue;
          }
          if (tree_ok) scratch.install_rule(spec, cfg.tree);
          cfg.rules.push_back(std::move(spec));
        } catch (const Error& e) {
          c.add(cfg.rules_file, where, std::string(to_string(e.code())) + ": " + e.what());
        } catch (const std::exception& e) {
          c.add(cfg.rules_file, where, e.what());
        }
      }
    }
  }
  if (!c.issues.empty()) throw ConfigError(std::move(c.issues));
  return cfg;
}

}  // namespace gaia::service
