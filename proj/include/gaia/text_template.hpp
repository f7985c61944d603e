#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace gaia {

// `{name}` placeholders; `{{` and `}}` are literal braces. Throws
// Error{template_error} on unbalanced braces or empty names.
std::vector<std::string> template_placeholders(std::string_view tmpl);

// Throws Error{template_error} for a placeholder missing from `values`.
std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string, std::less<>>& values);

}  // namespace gaia
