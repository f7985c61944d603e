#pragma once

// Condition trees evaluated by truth table, independent of the engine's
// evaluator and snapshot code.

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace gaia::oracles {

// 0 = false, 1 = true, 2 = unknown
using K = int;

inline constexpr std::array<std::array<K, 3>, 3> kAnd{{{0, 0, 0}, {0, 1, 2}, {0, 2, 2}}};
inline constexpr std::array<std::array<K, 3>, 3> kOr{{{0, 1, 2}, {1, 1, 1}, {2, 1, 2}}};
inline constexpr std::array<K, 3> kNot{1, 0, 2};

struct Tree {
  enum Op { leaf, op_and, op_or, op_not } op = leaf;
  int slot = 0;  // leaf: index into the per-leaf comparison list
  std::shared_ptr<const Tree> a, b;
};
using TreePtr = std::shared_ptr<const Tree>;

inline int tree_depth(const Tree& t) {
  switch (t.op) {
    case Tree::leaf: return 0;
    case Tree::op_not: return 1 + tree_depth(*t.a);
    default: return 1 + std::max(tree_depth(*t.a), tree_depth(*t.b));
  }
}

// Every tree shape of depth <= `depth` with exactly `leaves` leaves; leaves
// are numbered left to right.
inline std::vector<TreePtr> shapes(int depth, int leaves, int first = 0) {
  std::vector<TreePtr> out;
  if (leaves < 1) return out;
  if (leaves == 1) out.push_back(std::make_shared<Tree>(Tree{Tree::leaf, first, {}, {}}));
  if (depth == 0) return out;
  for (const auto& s : shapes(depth - 1, leaves, first)) {
    out.push_back(std::make_shared<Tree>(Tree{Tree::op_not, 0, s, {}}));
  }
  for (int k = 1; k < leaves; ++k) {
    const auto left = shapes(depth - 1, k, first);
    const auto right = shapes(depth - 1, leaves - k, first + k);
    for (const auto& l : left) {
      for (const auto& r : right) {
        out.push_back(std::make_shared<Tree>(Tree{Tree::op_and, 0, l, r}));
        out.push_back(std::make_shared<Tree>(Tree{Tree::op_or, 0, l, r}));
      }
    }
  }
  return out;
}

// Restricted growth strings: every way to assign `n` leaves to metrics up to
// relabeling.
inline std::vector<std::vector<int>> metric_assignments(int n) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  auto rec = [&](auto&& self, int next_new) -> void {
    if (static_cast<int>(cur.size()) == n) {
      out.push_back(cur);
      return;
    }
    for (int m = 0; m <= next_new; ++m) {
      cur.push_back(m);
      self(self, m == next_new ? next_new + 1 : next_new);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

inline K eval_tree(const Tree& t, const std::vector<K>& leaf_values) {
  switch (t.op) {
    case Tree::leaf: return leaf_values[static_cast<std::size_t>(t.slot)];
    case Tree::op_not: return kNot[static_cast<std::size_t>(eval_tree(*t.a, leaf_values))];
    case Tree::op_and:
      return kAnd[static_cast<std::size_t>(eval_tree(*t.a, leaf_values))]
                 [static_cast<std::size_t>(eval_tree(*t.b, leaf_values))];
    case Tree::op_or:
      return kOr[static_cast<std::size_t>(eval_tree(*t.a, leaf_values))]
                [static_cast<std::size_t>(eval_tree(*t.b, leaf_values))];
  }
  return 2;
}

// Fully parenthesized text; `leaf_text` renders leaf `slot`.
template <typename F>
std::string tree_text(const Tree& t, const F& leaf_text) {
  switch (t.op) {
    case Tree::leaf: return leaf_text(t.slot);
    case Tree::op_not: return "NOT (" + tree_text(*t.a, leaf_text) + ")";
    case Tree::op_and:
      return "(" + tree_text(*t.a, leaf_text) + ") AND (" + tree_text(*t.b, leaf_text) + ")";
    case Tree::op_or:
      return "(" + tree_text(*t.a, leaf_text) + ") OR (" + tree_text(*t.b, leaf_text) + ")";
  }
  return {};
}

}  // namespace gaia::oracles
