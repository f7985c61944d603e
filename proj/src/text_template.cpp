#include "gaia/text_template.hpp"

#include "gaia/error.hpp"

namespace gaia {

namespace {

template <typename OnText, typename OnPlaceholder>
void scan(std::string_view tmpl, OnText on_text, OnPlaceholder on_placeholder) {
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const char c = tmpl[i];
    if (c == '{') {
      if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
        on_text('{');
        i += 2;
        continue;
      }
      const auto close = tmpl.find('}', i + 1);
      if (close == std::string_view::npos) {
        throw Error(Errc::template_error, "unterminated placeholder at offset " + std::to_string(i));
      }
      const std::string_view name = tmpl.substr(i + 1, close - i - 1);
      if (name.empty() || name.find('{') != std::string_view::npos) {
        throw Error(Errc::template_error, "malformed placeholder at offset " + std::to_string(i));
      }
      on_placeholder(name);
      i = close + 1;
    } else if (c == '}') {
      if (i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
        on_text('}');
        i += 2;
        continue;
      }
      throw Error(Errc::template_error, "stray '}' at offset " + std::to_string(i));
    } else {
      on_text(c);
      ++i;
    }
  }
}

}  // namespace

std::vector<std::string> template_placeholders(std::string_view tmpl) {
  std::vector<std::string> out;
  scan(tmpl, [](char) {}, [&](std::string_view name) { out.emplace_back(name); });
  return out;
}

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  scan(
      tmpl, [&](char c) { out += c; },
      [&](std::string_view name) {
        auto it = values.find(name);
        if (it == values.end()) {
          throw Error(Errc::template_error, "unbound placeholder {" + std::string(name) + "}");
        }
        out += it->second;
      });
  return out;
}

}  // namespace gaia
