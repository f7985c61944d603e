#include "gaia/condition.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>

#include "gaia/error.hpp"
#include "gaia/model.hpp"
#include "gaia/numeric.hpp"

namespace gaia::rules {

Truth operator&&(Truth a, Truth b) {
  if (a == Truth::no || b == Truth::no) return Truth::no;
  if (a == Truth::yes && b == Truth::yes) return Truth::yes;
  return Truth::unknown;
}

Truth operator||(Truth a, Truth b) {
  if (a == Truth::yes || b == Truth::yes) return Truth::yes;
  if (a == Truth::no && b == Truth::no) return Truth::no;
  return Truth::unknown;
}

Truth operator!(Truth a) {
  switch (a) {
    case Truth::no: return Truth::yes;
    case Truth::yes: return Truth::no;
    case Truth::unknown: return Truth::unknown;
  }
  return Truth::unknown;
}

std::string_view to_string(Truth t) {
  switch (t) {
    case Truth::no: return "false";
    case Truth::yes: return "true";
    case Truth::unknown: return "unknown";
  }
  return "?";
}

std::string_view to_string(CompareOp op) {
  switch (op) {
    case CompareOp::gt: return ">";
    case CompareOp::ge: return ">=";
    case CompareOp::lt: return "<";
    case CompareOp::le: return "<=";
    case CompareOp::eq: return "=";
    case CompareOp::ne: return "!=";
  }
  return "?";
}

std::string_view to_string(WindowAgg agg) {
  switch (agg) {
    case WindowAgg::mean: return "mean";
    case WindowAgg::max: return "max";
    case WindowAgg::min: return "min";
    case WindowAgg::sum: return "sum";
  }
  return "?";
}

bool compare(double lhs, CompareOp op, double rhs) {
  switch (op) {
    case CompareOp::gt: return lhs > rhs;
    case CompareOp::ge: return lhs >= rhs;
    case CompareOp::lt: return lhs < rhs;
    case CompareOp::le: return lhs <= rhs;
    case CompareOp::eq: return lhs == rhs;
    case CompareOp::ne: return lhs != rhs;
  }
  return false;
}

std::string format_duration(std::int64_t seconds) {
  if (seconds % 86400 == 0) return std::to_string(seconds / 86400) + "d";
  if (seconds % 3600 == 0) return std::to_string(seconds / 3600) + "h";
  if (seconds % 60 == 0) return std::to_string(seconds / 60) + "m";
  return std::to_string(seconds) + "s";
}

std::string to_string(const MetricRef& ref) {
  std::string out(gaia::to_string(ref.kind));
  out += '@';
  out += ref.path;
  if (ref.window) {
    out += '[';
    out += format_duration(ref.window->duration_s);
    out += ' ';
    out += to_string(ref.window->agg);
    out += ']';
  }
  return out;
}

Condition make_and(Condition lhs, Condition rhs) {
  return Condition{And{std::move(lhs), std::move(rhs)}};
}

Condition make_or(Condition lhs, Condition rhs) {
  return Condition{Or{std::move(lhs), std::move(rhs)}};
}

Condition make_not(Condition operand) { return Condition{Not{std::move(operand)}}; }

std::size_t depth(const Condition& c) {
  return std::visit(
      [](const auto& n) -> std::size_t {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, And> || std::is_same_v<T, Or>) {
          return 1 + std::max(depth(*n.lhs), depth(*n.rhs));
        } else if constexpr (std::is_same_v<T, Not>) {
          return 1 + depth(*n.operand);
        } else {
          return 0;
        }
      },
      c.node);
}

void for_each_leaf(const Condition& c,
                   const std::function<void(const Comparison&)>& on_comparison,
                   const std::function<void(const EmptyCheck&)>& on_empty) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Comparison>) {
          if (on_comparison) on_comparison(n);
        } else if constexpr (std::is_same_v<T, EmptyCheck>) {
          if (on_empty) on_empty(n);
        } else if constexpr (std::is_same_v<T, Not>) {
          for_each_leaf(*n.operand, on_comparison, on_empty);
        } else {
          for_each_leaf(*n.lhs, on_comparison, on_empty);
          for_each_leaf(*n.rhs, on_comparison, on_empty);
        }
      },
      c.node);
}

namespace {

enum class Tok { word, lparen, rparen, comma, op, end };

struct Token {
  Tok type;
  std::string text;
  std::size_t index;   // 1-based
  std::size_t column;  // 1-based
};

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
         c == '.' || c == '/' || c == '+';
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  std::size_t i = 0;
  auto push = [&](Tok type, std::size_t begin, std::size_t len) {
    out.push_back(Token{type, std::string(text.substr(begin, len)), out.size() + 1, begin + 1});
    i = begin + len;
  };
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::string_view rest = text.substr(i);
    if (c == '(') {
      push(Tok::lparen, i, 1);
    } else if (c == ')') {
      push(Tok::rparen, i, 1);
    } else if (c == ',') {
      push(Tok::comma, i, 1);
    } else if (rest.starts_with(">=") || rest.starts_with("<=") || rest.starts_with("==") ||
               rest.starts_with("!=")) {
      push(Tok::op, i, 2);
    } else if (c == '>' || c == '<' || c == '=') {
      push(Tok::op, i, 1);
    } else if (rest.starts_with("≥") || rest.starts_with("≤") ||
               rest.starts_with("≠")) {
      push(Tok::op, i, 3);
    } else if (is_word_char(c)) {
      std::size_t j = i;
      while (j < text.size() && is_word_char(text[j])) ++j;
      push(Tok::word, i, j - i);
    } else {
      throw SyntaxError(out.size() + 1, i + 1,
                        "unexpected character '" + std::string(1, c) + "' at column " +
                            std::to_string(i + 1));
    }
  }
  out.push_back(Token{Tok::end, "", out.size() + 1, text.size() + 1});
  return out;
}

bool keyword(const Token& t, std::string_view kw) {
  if (t.type != Tok::word || t.text.size() != kw.size()) return false;
  for (std::size_t i = 0; i < kw.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(t.text[i])) != kw[i]) return false;
  }
  return true;
}

class Parser {
 public:
  Parser(std::string_view text, const PathResolver& resolver)
      : tokens_(tokenize(text)), resolver_(resolver) {}

  Condition parse() {
    if (tokens_.size() == 1) fail(peek(), "empty condition");
    Condition c = expr();
    if (peek().type != Tok::end) fail(peek(), "unexpected '" + peek().text + "'");
    return c;
  }

 private:
  std::vector<Token> tokens_;
  const PathResolver& resolver_;
  std::size_t pos_ = 0;

  const Token& peek() const { return tokens_[pos_]; }
  const Token& next() { return tokens_[pos_ < tokens_.size() - 1 ? pos_++ : pos_]; }

  [[noreturn]] static void fail(const Token& t, const std::string& what) {
    throw SyntaxError(t.index, t.column,
                      what + " at token " + std::to_string(t.index) + " (column " +
                          std::to_string(t.column) + ")");
  }

  const Token& expect(Tok type, std::string_view what) {
    if (peek().type != type) {
      fail(peek(), "expected " + std::string(what) +
                       (peek().type == Tok::end ? std::string(" before end of input")
                                                : ", found '" + peek().text + "'"));
    }
    return next();
  }

  Condition expr() {
    Condition lhs = term();
    while (keyword(peek(), "or")) {
      next();
      lhs = make_or(std::move(lhs), term());
    }
    return lhs;
  }

  Condition term() {
    Condition lhs = factor();
    while (keyword(peek(), "and")) {
      next();
      lhs = make_and(std::move(lhs), factor());
    }
    return lhs;
  }

  Condition factor() {
    const Token& t = peek();
    if (keyword(t, "not")) {
      next();
      return make_not(factor());
    }
    if (t.type == Tok::lparen) {
      next();
      Condition inner = expr();
      expect(Tok::rparen, "')'");
      return inner;
    }
    if (keyword(t, "metric")) return metric_comparison();
    if (keyword(t, "light")) return light_comparison();
    if (keyword(t, "empty")) return empty_check();
    fail(t, t.type == Tok::end ? "expected a condition before end of input"
                               : "expected a condition, found '" + t.text + "'");
  }

  std::string path() {
    const Token& t = expect(Tok::word, "a resource path");
    for (std::string_view seg : model::split_path(t.text)) {
      if (!model::is_valid_name(seg)) fail(t, "malformed resource path '" + t.text + "'");
    }
    if (!resolver_) return t.text;
    auto resolved = resolver_(t.text);
    if (!resolved) {
      throw Error(Errc::unknown_path, "unknown resource path '" + t.text + "' at token " +
                                          std::to_string(t.index));
    }
    return *resolved;
  }

  std::int64_t duration() {
    const Token& t = expect(Tok::word, "a duration");
    std::int64_t value = 0;
    const char* begin = t.text.data();
    const char* end = begin + t.text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{}) fail(t, "bad duration '" + t.text + "'");
    std::int64_t scale = 1;
    const std::string_view unit(ptr, static_cast<std::size_t>(end - ptr));
    if (unit == "m") {
      scale = 60;
    } else if (unit == "h") {
      scale = 3600;
    } else if (unit == "d") {
      scale = 86400;
    } else if (!unit.empty() && unit != "s") {
      fail(t, "bad duration '" + t.text + "'");
    }
    if (value <= 0) fail(t, "duration must be positive");
    return value * scale;
  }

  double number() {
    const Token& t = expect(Tok::word, "a number");
    double value = 0.0;
    const char* begin = t.text.data();
    const char* end = begin + t.text.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc{} || ptr != end || !std::isfinite(value)) {
      fail(t, "expected a number, found '" + t.text + "'");
    }
    return value;
  }

  CompareOp op() {
    const Token& t = expect(Tok::op, "a comparison operator");
    if (t.text == ">") return CompareOp::gt;
    if (t.text == ">=" || t.text == "≥") return CompareOp::ge;
    if (t.text == "<") return CompareOp::lt;
    if (t.text == "<=" || t.text == "≤") return CompareOp::le;
    if (t.text == "=" || t.text == "==") return CompareOp::eq;
    return CompareOp::ne;
  }

  Condition metric_comparison() {
    next();
    expect(Tok::lparen, "'('");
    MetricRef ref;
    ref.path = path();
    expect(Tok::comma, "','");
    const Token& kind_tok = expect(Tok::word, "a sensor kind");
    auto kind = parse_sensor_kind(kind_tok.text);
    if (!kind) {
      throw Error(Errc::unknown_kind, "unknown sensor kind '" + kind_tok.text +
                                          "' at token " + std::to_string(kind_tok.index));
    }
    ref.kind = *kind;
    if (peek().type == Tok::comma) {
      next();
      Window w;
      w.duration_s = duration();
      if (peek().type == Tok::comma) {
        next();
        const Token& agg = expect(Tok::word, "a window aggregate");
        if (keyword(agg, "mean")) {
          w.agg = WindowAgg::mean;
        } else if (keyword(agg, "max")) {
          w.agg = WindowAgg::max;
        } else if (keyword(agg, "min")) {
          w.agg = WindowAgg::min;
        } else if (keyword(agg, "sum")) {
          w.agg = WindowAgg::sum;
        } else {
          fail(agg, "unknown window aggregate '" + agg.text + "'");
        }
      }
      ref.window = w;
    }
    expect(Tok::rparen, "')'");
    const CompareOp cmp = op();
    const double literal = number();
    return Condition{Comparison{std::move(ref), cmp, literal}};
  }

  Condition light_comparison() {
    next();
    expect(Tok::lparen, "'('");
    MetricRef ref;
    ref.path = path();
    ref.kind = SensorKind::light_state;
    expect(Tok::rparen, "')'");
    if (!keyword(peek(), "is")) fail(peek(), "expected 'is'");
    next();
    const Token& state = peek();
    double literal = 0.0;
    if (keyword(state, "on")) {
      literal = 1.0;
    } else if (!keyword(state, "off")) {
      fail(state, "expected 'on' or 'off'");
    }
    next();
    return Condition{Comparison{std::move(ref), CompareOp::eq, literal}};
  }

  Condition empty_check() {
    next();
    expect(Tok::lparen, "'('");
    EmptyCheck check;
    check.path = path();
    if (peek().type == Tok::comma) {
      next();
      check.dwell_s = duration();
    }
    expect(Tok::rparen, "')'");
    return Condition{std::move(check)};
  }
};

int precedence(const Condition& c) {
  if (std::holds_alternative<Or>(c.node)) return 1;
  if (std::holds_alternative<And>(c.node)) return 2;
  return 3;
}

void print(const Condition& c, int required, std::string& out) {
  const bool parens = precedence(c) < required;
  if (parens) out += '(';
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Comparison>) {
          const MetricRef& m = n.metric;
          if (m.kind == SensorKind::light_state && !m.window && n.op == CompareOp::eq &&
              (n.literal == 1.0 || n.literal == 0.0)) {
            out += "light(" + m.path + ") is " + (n.literal == 1.0 ? "on" : "off");
            return;
          }
          out += "metric(" + m.path + ", " + std::string(gaia::to_string(m.kind));
          if (m.window) {
            out += ", " + format_duration(m.window->duration_s) + ", " +
                   std::string(to_string(m.window->agg));
          }
          out += ") " + std::string(to_string(n.op)) + " " + format_number(n.literal);
        } else if constexpr (std::is_same_v<T, EmptyCheck>) {
          out += "empty(" + n.path;
          if (n.dwell_s) out += ", " + format_duration(*n.dwell_s);
          out += ')';
        } else if constexpr (std::is_same_v<T, Not>) {
          out += "NOT ";
          print(*n.operand, 3, out);
        } else if constexpr (std::is_same_v<T, And>) {
          print(*n.lhs, 2, out);
          out += " AND ";
          print(*n.rhs, 3, out);
        } else {
          print(*n.lhs, 1, out);
          out += " OR ";
          print(*n.rhs, 2, out);
        }
      },
      c.node);
  if (parens) out += ')';
}

}  // namespace

Condition parse_condition(std::string_view text, const PathResolver& resolver) {
  return Parser(text, resolver).parse();
}

std::string to_text(const Condition& c) {
  std::string out;
  print(c, 0, out);
  return out;
}

}  // namespace gaia::rules
