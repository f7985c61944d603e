#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gaia/error.hpp"
#include "gaia/platform.hpp"

namespace gaia::service {

struct HttpRequest {
  std::string method;
  std::string target;  // path plus optional query
  std::string authorization;
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

int http_status(Errc code);
std::string error_body(const Error& e);

std::string percent_decode(std::string_view text);
// Splits "/a/b?x=1&y=2" into decoded segments and query parameters.
struct ParsedTarget {
  std::vector<std::string> segments;
  std::map<std::string, std::string> query;
};
ParsedTarget parse_target(std::string_view target);

// `Authorization: Bearer <user-id>`; the token is the user id.
std::optional<std::string> bearer_token(std::string_view header);

// The REST surface over a Platform, independent of the transport.
class Api {
 public:
  explicit Api(Platform& platform) : p_(platform) {}

  HttpResponse handle(const HttpRequest& req);

 private:
  Platform& p_;
};

}  // namespace gaia::service
