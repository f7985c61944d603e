#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "gaia/sensor.hpp"
#include "gaia/time.hpp"

namespace gaia::rules {

// Three-valued (Kleene) truth.
enum class Truth { no, yes, unknown };

Truth operator&&(Truth a, Truth b);
Truth operator||(Truth a, Truth b);
Truth operator!(Truth a);
std::string_view to_string(Truth t);

enum class CompareOp { gt, ge, lt, le, eq, ne };
enum class WindowAgg { mean, max, min, sum };

std::string_view to_string(CompareOp op);
std::string_view to_string(WindowAgg agg);
bool compare(double lhs, CompareOp op, double rhs);

struct Window {
  std::int64_t duration_s = 0;
  WindowAgg agg = WindowAgg::mean;

  auto operator<=>(const Window&) const = default;
};

struct MetricRef {
  std::string path;
  SensorKind kind = SensorKind::power_w;
  std::optional<Window> window;

  auto operator<=>(const MetricRef&) const = default;
};

std::string to_string(const MetricRef& ref);

struct Comparison {
  MetricRef metric;
  CompareOp op = CompareOp::gt;
  double literal = 0.0;

  friend bool operator==(const Comparison&, const Comparison&) = default;
};

struct EmptyCheck {
  std::string path;
  // Engine default applies when unset.
  std::optional<std::int64_t> dwell_s;

  friend bool operator==(const EmptyCheck&, const EmptyCheck&) = default;
};

// Owning pointer with value semantics for the recursive variant.
template <typename T>
class Box {
 public:
  Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}
  Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
  Box(Box&&) noexcept = default;
  Box& operator=(const Box& other) {
    ptr_ = std::make_unique<T>(*other.ptr_);
    return *this;
  }
  Box& operator=(Box&&) noexcept = default;

  const T& operator*() const { return *ptr_; }
  const T* operator->() const { return ptr_.get(); }

  friend bool operator==(const Box& a, const Box& b) { return *a == *b; }

 private:
  std::unique_ptr<T> ptr_;
};

struct Condition;

struct And {
  Box<Condition> lhs;
  Box<Condition> rhs;
  friend bool operator==(const And&, const And&) = default;
};

struct Or {
  Box<Condition> lhs;
  Box<Condition> rhs;
  friend bool operator==(const Or&, const Or&) = default;
};

struct Not {
  Box<Condition> operand;
  friend bool operator==(const Not&, const Not&) = default;
};

struct Condition {
  std::variant<Comparison, EmptyCheck, And, Or, Not> node;

  friend bool operator==(const Condition&, const Condition&) = default;
};

Condition make_and(Condition lhs, Condition rhs);
Condition make_or(Condition lhs, Condition rhs);
Condition make_not(Condition operand);

std::size_t depth(const Condition& c);

// Visits every leaf in left-to-right order.
void for_each_leaf(const Condition& c,
                   const std::function<void(const Comparison&)>& on_comparison,
                   const std::function<void(const EmptyCheck&)>& on_empty);

// Maps a path as written in a condition to its canonical form; nullopt when
// it does not resolve.
using PathResolver = std::function<std::optional<std::string>(std::string_view)>;

// Grammar (keywords case-insensitive):
//   expr       := term (OR term)*
//   term       := factor (AND factor)*
//   factor     := NOT factor | '(' expr ')' | comparison | empty
//   comparison := metric '(' path ',' kind [',' duration [',' agg]] ')' op number
//               | light '(' path ')' is (on|off)
//   empty      := empty '(' path [',' duration] ')'
//   duration   := integer seconds, or integer with s|m|h|d suffix
//   op         := > | >= | < | <= | = | == | != | and their Unicode forms
// Throws SyntaxError (1-based token number), Error{unknown_kind},
// Error{unknown_path}.
Condition parse_condition(std::string_view text, const PathResolver& resolver = {});

// Canonical text; parse_condition(to_text(c)) == c.
std::string to_text(const Condition& c);

std::string format_duration(std::int64_t seconds);

}  // namespace gaia::rules
