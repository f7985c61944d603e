#include "gaia/model.hpp"

#include <algorithm>

#include "gaia/error.hpp"
#include "gaia/time.hpp"

namespace gaia::model {

using nlohmann::json;

std::string_view to_string(NodeKind kind) {
  switch (kind) {
    case NodeKind::site: return "site";
    case NodeKind::building: return "building";
    case NodeKind::floor: return "floor";
    case NodeKind::room: return "room";
    case NodeKind::meter: return "meter";
  }
  return "?";
}

std::optional<NodeKind> parse_node_kind(std::string_view text) {
  for (NodeKind k : {NodeKind::site, NodeKind::building, NodeKind::floor,
                     NodeKind::room, NodeKind::meter}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

std::string_view to_string(EnergyType type) {
  switch (type) {
    case EnergyType::electricity: return "electricity";
    case EnergyType::heating_fuel: return "heating_fuel";
    case EnergyType::gas: return "gas";
    case EnergyType::district_heat: return "district_heat";
  }
  return "?";
}

std::optional<EnergyType> parse_energy_type(std::string_view text) {
  for (EnergyType t : {EnergyType::electricity, EnergyType::heating_fuel,
                       EnergyType::gas, EnergyType::district_heat}) {
    if (to_string(t) == text) return t;
  }
  return std::nullopt;
}

bool parent_kind_allowed(std::optional<NodeKind> parent, NodeKind child) {
  if (!parent) return child == NodeKind::site;
  switch (child) {
    case NodeKind::site: return false;
    case NodeKind::building: return *parent == NodeKind::site;
    case NodeKind::floor: return *parent == NodeKind::building;
    case NodeKind::room: return *parent == NodeKind::floor;
    case NodeKind::meter:
      return *parent == NodeKind::floor || *parent == NodeKind::building;
  }
  return false;
}

void validate(const BuildingMeta& meta) {
  if (!(meta.surface_m2 > 0.0)) {
    throw Error(Errc::validation_failed, "surface_m2 must be positive");
  }
  if (meta.occupant_count < 1) {
    throw Error(Errc::validation_failed, "occupant_count must be at least 1");
  }
  if (!is_known_zone(meta.timezone)) {
    throw Error(Errc::validation_failed, "unknown timezone '" + meta.timezone + "'");
  }
}

bool is_valid_name(std::string_view name) {
  if (name.empty()) return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
           (c >= '0' && c <= '9') || c == '-';
  });
}

std::vector<std::string_view> split_path(std::string_view path) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t slash = path.find('/', start);
    const std::size_t end = slash == std::string_view::npos ? path.size() : slash;
    out.push_back(path.substr(start, end - start));
    if (slash == std::string_view::npos) break;
    start = slash + 1;
  }
  return out;
}

bool path_covers(std::string_view scope, std::string_view path) {
  if (scope.empty()) return true;
  if (path.size() < scope.size() || path.substr(0, scope.size()) != scope) {
    return false;
  }
  return path.size() == scope.size() || path[scope.size()] == '/';
}

ResourceTree ResourceTree::build(std::span<const NodeDef> defs) {
  if (defs.empty()) {
    throw Error(Errc::validation_failed, "resource tree needs at least one node");
  }
  ResourceTree tree;
  tree.nodes_.assign(defs.begin(), defs.end());
  const std::size_t n = tree.nodes_.size();

  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = tree.nodes_[i];
    if (node.id.empty()) {
      throw Error(Errc::validation_failed, "node #" + std::to_string(i) + " has an empty id");
    }
    if (!tree.by_id_.emplace(node.id, i).second) {
      throw Error(Errc::duplicate_id, "duplicate node id '" + node.id + "'");
    }
    if (!is_valid_name(node.name)) {
      throw Error(Errc::invalid_name,
                  "node '" + node.id + "' has invalid name '" + node.name + "'");
    }
  }

  tree.parent_.assign(n, std::nullopt);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = tree.nodes_[i];
    if (!node.parent) continue;
    auto it = tree.by_id_.find(*node.parent);
    if (it == tree.by_id_.end()) {
      throw Error(Errc::unknown_parent, "node '" + node.id +
                                            "' references unknown parent '" +
                                            *node.parent + "'");
    }
    tree.parent_[i] = it->second;
  }

  // Cycle check: walk up from every node, colouring nodes already proven to
  // reach a root.
  std::vector<char> state(n, 0);  // 0 unvisited, 1 on stack, 2 done
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> chain;
    std::optional<std::size_t> cur = i;
    while (cur && state[*cur] == 0) {
      state[*cur] = 1;
      chain.push_back(*cur);
      cur = tree.parent_[*cur];
    }
    if (cur && state[*cur] == 1) {
      throw Error(Errc::cycle_detected,
                  "parent links of node '" + tree.nodes_[*cur].id + "' form a cycle");
    }
    for (std::size_t c : chain) state[c] = 2;
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto& node = tree.nodes_[i];
    std::optional<NodeKind> parent_kind;
    if (tree.parent_[i]) parent_kind = tree.nodes_[*tree.parent_[i]].kind;
    if (!parent_kind_allowed(parent_kind, node.kind)) {
      throw Error(Errc::bad_parent_kind,
                  "node '" + node.id + "' of kind " + std::string(to_string(node.kind)) +
                      (parent_kind ? " cannot be placed under a " +
                                         std::string(to_string(*parent_kind))
                                   : std::string(" cannot be a root")));
    }
    if (node.meta) {
      if (node.kind != NodeKind::building) {
        throw Error(Errc::validation_failed,
                    "node '" + node.id + "' carries building metadata but is not a building");
      }
      validate(*node.meta);
    }
  }

  tree.children_.assign(n, {});
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i) {
    if (tree.parent_[i]) {
      tree.children_[*tree.parent_[i]].push_back(i);
    } else {
      roots.push_back(i);
    }
  }
  auto check_siblings = [&](const std::vector<std::size_t>& ids) {
    std::set<std::string_view> seen;
    for (std::size_t c : ids) {
      if (!seen.insert(tree.nodes_[c].name).second) {
        throw Error(Errc::duplicate_name, "node '" + tree.nodes_[c].id +
                                              "' repeats sibling name '" +
                                              tree.nodes_[c].name + "'");
      }
    }
  };
  check_siblings(roots);
  for (const auto& kids : tree.children_) check_siblings(kids);

  tree.paths_.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string_view> names;
    for (std::optional<std::size_t> cur = i; cur; cur = tree.parent_[*cur]) {
      names.push_back(tree.nodes_[*cur].name);
    }
    std::string path;
    for (auto it = names.rbegin(); it != names.rend(); ++it) {
      if (!path.empty()) path += '/';
      path += *it;
    }
    tree.paths_[i] = std::move(path);
  }
  return tree;
}

ResourceTree build_resource_tree(std::span<const NodeDef> defs) {
  return ResourceTree::build(defs);
}

const ResourceNode* ResourceTree::find(std::string_view id) const {
  auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &nodes_[it->second];
}

const ResourceNode& ResourceTree::at(std::string_view id) const {
  if (const auto* node = find(id)) return *node;
  throw Error(Errc::not_found, "no node with id '" + std::string(id) + "'");
}

const ResourceNode* ResourceTree::try_resolve(std::string_view path) const {
  try {
    return &resolve_path(path);
  } catch (const Error&) {
    return nullptr;
  }
}

const ResourceNode& ResourceTree::resolve_path(std::string_view path) const {
  if (path.empty()) throw Error(Errc::not_found, "empty resource path");
  std::optional<std::size_t> cur;
  for (std::string_view name : split_path(path)) {
    std::optional<std::size_t> match;
    auto consider = [&](std::size_t idx) {
      if (nodes_[idx].name != name) return;
      if (match) {
        throw Error(Errc::ambiguous_name,
                    "path '" + std::string(path) + "' is ambiguous at '" +
                        std::string(name) + "'");
      }
      match = idx;
    };
    if (!cur) {
      for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!parent_[i]) consider(i);
      }
    } else {
      for (std::size_t c : children_[*cur]) consider(c);
    }
    if (!match) {
      throw Error(Errc::not_found, "path '" + std::string(path) + "' not found");
    }
    cur = match;
  }
  return nodes_[*cur];
}

std::size_t ResourceTree::index_of(const ResourceNode& node) const {
  return static_cast<std::size_t>(&node - nodes_.data());
}

const std::string& ResourceTree::canonical_path(const ResourceNode& node) const {
  return paths_[index_of(node)];
}

const ResourceNode* ResourceTree::parent_of(const ResourceNode& node) const {
  const auto& p = parent_[index_of(node)];
  return p ? &nodes_[*p] : nullptr;
}

std::vector<const ResourceNode*> ResourceTree::children_of(const ResourceNode& node) const {
  std::vector<const ResourceNode*> out;
  for (std::size_t c : children_[index_of(node)]) out.push_back(&nodes_[c]);
  return out;
}

std::vector<const ResourceNode*> ResourceTree::roots() const {
  std::vector<const ResourceNode*> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!parent_[i]) out.push_back(&nodes_[i]);
  }
  return out;
}

const ResourceNode* ResourceTree::building_of(const ResourceNode& node) const {
  for (const ResourceNode* cur = &node; cur; cur = parent_of(*cur)) {
    if (cur->kind == NodeKind::building) return cur;
  }
  return nullptr;
}

const ResourceNode* ResourceTree::site_of(const ResourceNode& node) const {
  const ResourceNode* cur = &node;
  while (const ResourceNode* p = parent_of(*cur)) cur = p;
  return cur->kind == NodeKind::site ? cur : nullptr;
}

bool ResourceTree::is_ancestor_or_self(const ResourceNode& ancestor,
                                       const ResourceNode& node) const {
  for (const ResourceNode* cur = &node; cur; cur = parent_of(*cur)) {
    if (cur == &ancestor) return true;
  }
  return false;
}

std::vector<const ResourceNode*> ResourceTree::buildings() const {
  std::vector<const ResourceNode*> out;
  for (const auto& n : nodes_) {
    if (n.kind == NodeKind::building) out.push_back(&n);
  }
  return out;
}

std::string timezone_of(const ResourceTree& tree, const ResourceNode& node) {
  const ResourceNode* b = tree.building_of(node);
  if (b && b->meta) return b->meta->timezone;
  return "UTC";
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::building_manager: return "building_manager";
    case Role::teacher: return "teacher";
    case Role::student: return "student";
  }
  return "?";
}

std::optional<Role> parse_role(std::string_view text) {
  for (Role r : {Role::building_manager, Role::teacher, Role::student}) {
    if (to_string(r) == text) return r;
  }
  return std::nullopt;
}

void validate(const User& user) {
  if (user.id.empty()) throw Error(Errc::validation_failed, "user id is empty");
  if (user.role == Role::building_manager) {
    if (user.building_ids.empty()) {
      throw Error(Errc::validation_failed,
                  "manager '" + user.id + "' must manage at least one building");
    }
  } else if (!user.class_id || user.class_id->empty()) {
    throw Error(Errc::validation_failed,
                "user '" + user.id + "' must belong to a class");
  }
}

std::string_view to_string(Action action) {
  switch (action) {
    case Action::insert_building_data: return "insert_building_data";
    case Action::configure_facility: return "configure_facility";
    case Action::insert_reading: return "insert_reading";
    case Action::edit_rule: return "edit_rule";
    case Action::view: return "view";
  }
  return "?";
}

bool authorize(const User& user, Action action, const ResourceTree& tree,
               const ResourceNode& target) {
  if (action == Action::view) return true;
  const ResourceNode* building = tree.building_of(target);
  const bool in_scope = building && user.building_ids.contains(building->id);
  switch (action) {
    case Action::insert_building_data:
    case Action::configure_facility:
    case Action::edit_rule:
      return user.role == Role::building_manager && in_scope;
    case Action::insert_reading:
      return in_scope;
    case Action::view:
      return true;
  }
  return false;
}

TreeRegistry::TreeRegistry(ResourceTree tree)
    : current_(std::make_shared<const ResourceTree>(std::move(tree))) {}

std::shared_ptr<const ResourceTree> TreeRegistry::snapshot() const {
  std::lock_guard lock(mutex_);
  return current_;
}

void TreeRegistry::replace(ResourceTree tree) {
  std::lock_guard writer(writer_);
  auto next = std::make_shared<const ResourceTree>(std::move(tree));
  std::lock_guard lock(mutex_);
  current_ = std::move(next);
}

std::shared_ptr<const ResourceTree> TreeRegistry::update(
    const std::function<void(std::vector<NodeDef>&)>& edit) {
  std::lock_guard writer(writer_);
  auto base = snapshot();
  std::vector<NodeDef> defs(base->nodes().begin(), base->nodes().end());
  edit(defs);
  auto next = std::make_shared<const ResourceTree>(ResourceTree::build(defs));
  std::lock_guard lock(mutex_);
  current_ = next;
  return next;
}

void UserDirectory::add(User user) {
  validate(user);
  users_[user.id] = std::move(user);
}

const User* UserDirectory::find(std::string_view id) const {
  auto it = users_.find(id);
  return it == users_.end() ? nullptr : &it->second;
}

std::vector<User> UserDirectory::all() const {
  std::vector<User> out;
  for (const auto& [_, u] : users_) out.push_back(u);
  return out;
}

void to_json(json& j, const BuildingMeta& meta) {
  json types = json::array();
  for (EnergyType t : meta.energy_types) types.push_back(to_string(t));
  j = json{{"surface_m2", meta.surface_m2},
           {"energy_types", types},
           {"building_type", meta.building_type},
           {"construction_year", meta.construction_year},
           {"occupant_count", meta.occupant_count},
           {"timezone", meta.timezone}};
}

void from_json(const json& j, BuildingMeta& meta) {
  meta.surface_m2 = j.at("surface_m2").get<double>();
  meta.energy_types.clear();
  for (const auto& t : j.value("energy_types", json::array())) {
    auto parsed = parse_energy_type(t.get<std::string>());
    if (!parsed) {
      throw Error(Errc::validation_failed,
                  "unknown energy type '" + t.get<std::string>() + "'");
    }
    meta.energy_types.insert(*parsed);
  }
  meta.building_type = j.value("building_type", std::string{});
  meta.construction_year = j.value("construction_year", 0);
  meta.occupant_count = j.value("occupant_count", 1);
  meta.timezone = j.value("timezone", std::string("UTC"));
}

void to_json(json& j, const NodeDef& def) {
  j = json{{"id", def.id}, {"kind", to_string(def.kind)}, {"name", def.name}};
  if (def.parent) j["parent"] = *def.parent;
  if (def.meta) j["meta"] = *def.meta;
}

void from_json(const json& j, NodeDef& def) {
  def.id = j.at("id").get<std::string>();
  const auto kind_text = j.at("kind").get<std::string>();
  auto kind = parse_node_kind(kind_text);
  if (!kind) {
    throw Error(Errc::validation_failed,
                "node '" + def.id + "' has unknown kind '" + kind_text + "'");
  }
  def.kind = *kind;
  def.name = j.value("name", def.id);
  def.parent.reset();
  if (j.contains("parent") && !j["parent"].is_null()) {
    def.parent = j["parent"].get<std::string>();
  }
  def.meta.reset();
  if (j.contains("meta") && !j["meta"].is_null()) {
    def.meta = j["meta"].get<BuildingMeta>();
  }
}

void to_json(json& j, const User& user) {
  j = json{{"id", user.id}, {"role", to_string(user.role)},
           {"building_ids", user.building_ids}};
  if (user.class_id) j["class_id"] = *user.class_id;
}

void from_json(const json& j, User& user) {
  user.id = j.at("id").get<std::string>();
  const auto role_text = j.at("role").get<std::string>();
  auto role = parse_role(role_text);
  if (!role) {
    throw Error(Errc::validation_failed,
                "user '" + user.id + "' has unknown role '" + role_text + "'");
  }
  user.role = *role;
  user.class_id.reset();
  if (j.contains("class_id") && !j["class_id"].is_null()) {
    user.class_id = j["class_id"].get<std::string>();
  }
  user.building_ids = j.value("building_ids", std::set<std::string>{});
}

ResourceTree tree_from_json(const json& doc) {
  const json& nodes = doc.is_array() ? doc : doc.at("nodes");
  auto defs = nodes.get<std::vector<NodeDef>>();
  return ResourceTree::build(defs);
}

json tree_to_json(const ResourceTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes()) nodes.push_back(n);
  return json{{"nodes", nodes}};
}

}  // namespace gaia::model
