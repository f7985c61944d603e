#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace gaia::model {

enum class NodeKind { site, building, floor, room, meter };

enum class EnergyType { electricity, heating_fuel, gas, district_heat };

std::string_view to_string(NodeKind kind);
std::optional<NodeKind> parse_node_kind(std::string_view text);
std::string_view to_string(EnergyType type);
std::optional<EnergyType> parse_energy_type(std::string_view text);

// Whether a node of kind `child` may hang under a node of kind `parent`.
// Roots (no parent) must be sites.
bool parent_kind_allowed(std::optional<NodeKind> parent, NodeKind child);

struct BuildingMeta {
  double surface_m2 = 0.0;
  std::set<EnergyType> energy_types;
  std::string building_type;
  int construction_year = 0;
  int occupant_count = 1;
  std::string timezone = "UTC";

  friend bool operator==(const BuildingMeta&, const BuildingMeta&) = default;
};

// Throws Error{validation_failed} naming the first broken field.
void validate(const BuildingMeta& meta);

struct NodeDef {
  std::string id;
  NodeKind kind = NodeKind::site;
  std::string name;
  std::optional<std::string> parent;
  std::optional<BuildingMeta> meta;  // buildings only

  friend bool operator==(const NodeDef&, const NodeDef&) = default;
};

using ResourceNode = NodeDef;

// Node names are `[A-Za-z0-9-]+`; paths join names with '/'.
bool is_valid_name(std::string_view name);
std::vector<std::string_view> split_path(std::string_view path);
// Segment-wise prefix test: "s/b" covers "s/b" and "s/b/f", not "s/bb".
bool path_covers(std::string_view scope, std::string_view path);

// Immutable, validated site -> building -> floor -> room/meter forest.
class ResourceTree {
 public:
  ResourceTree() = default;

  // Throws DuplicateId, UnknownParent, CycleDetected, BadParentKind,
  // InvalidName or DuplicateName; each message names the offending node.
  static ResourceTree build(std::span<const NodeDef> defs);

  const ResourceNode* find(std::string_view id) const;
  const ResourceNode& at(std::string_view id) const;

  // Name walk from the roots. Throws NotFound or AmbiguousName.
  const ResourceNode& resolve_path(std::string_view path) const;
  const ResourceNode* try_resolve(std::string_view path) const;

  const std::string& canonical_path(const ResourceNode& node) const;
  const ResourceNode* parent_of(const ResourceNode& node) const;
  std::vector<const ResourceNode*> children_of(const ResourceNode& node) const;
  std::vector<const ResourceNode*> roots() const;

  // Nearest building among the node and its ancestors.
  const ResourceNode* building_of(const ResourceNode& node) const;
  const ResourceNode* site_of(const ResourceNode& node) const;
  bool is_ancestor_or_self(const ResourceNode& ancestor,
                           const ResourceNode& node) const;
  std::vector<const ResourceNode*> buildings() const;

  std::span<const ResourceNode> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

 private:
  std::vector<ResourceNode> nodes_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::optional<std::size_t>> parent_;
  std::vector<std::vector<std::size_t>> children_;
  std::vector<std::string> paths_;

  std::size_t index_of(const ResourceNode& node) const;
};

ResourceTree build_resource_tree(std::span<const NodeDef> defs);

// Time zone of the building that owns `node`, UTC when there is none.
std::string timezone_of(const ResourceTree& tree, const ResourceNode& node);

enum class Role { building_manager, teacher, student };

std::string_view to_string(Role role);
std::optional<Role> parse_role(std::string_view text);

struct User {
  std::string id;
  Role role = Role::student;
  std::optional<std::string> class_id;
  std::set<std::string> building_ids;

  friend bool operator==(const User&, const User&) = default;
};

void validate(const User& user);

enum class Action {
  insert_building_data,
  configure_facility,
  insert_reading,
  edit_rule,
  view,
};

std::string_view to_string(Action action);

// Never throws; unknown buildings simply deny.
bool authorize(const User& user, Action action, const ResourceTree& tree,
               const ResourceNode& target);

// Single-writer registry publishing immutable tree snapshots.
class TreeRegistry {
 public:
  explicit TreeRegistry(ResourceTree tree = {});

  std::shared_ptr<const ResourceTree> snapshot() const;
  void replace(ResourceTree tree);
  // Applies `edit` to a copy of the definitions and publishes the rebuilt
  // tree; invalid results throw and leave the current snapshot in place.
  std::shared_ptr<const ResourceTree> update(
      const std::function<void(std::vector<NodeDef>&)>& edit);

 private:
  mutable std::mutex mutex_;
  std::mutex writer_;
  std::shared_ptr<const ResourceTree> current_;
};

class UserDirectory {
 public:
  void add(User user);
  const User* find(std::string_view id) const;
  std::vector<User> all() const;

 private:
  std::map<std::string, User, std::less<>> users_;
};

void to_json(nlohmann::json& j, const BuildingMeta& meta);
void from_json(const nlohmann::json& j, BuildingMeta& meta);
void to_json(nlohmann::json& j, const NodeDef& def);
void from_json(const nlohmann::json& j, NodeDef& def);
void to_json(nlohmann::json& j, const User& user);
void from_json(const nlohmann::json& j, User& user);

// Accepts `{"nodes": [...]}` or a bare array of node definitions.
ResourceTree tree_from_json(const nlohmann::json& doc);
nlohmann::json tree_to_json(const ResourceTree& tree);

}  // namespace gaia::model
