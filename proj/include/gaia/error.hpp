#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gaia {

enum class Errc {
  validation_failed,
  unauthorized,
  not_found,
  conflict,
  // resource tree
  duplicate_id,
  duplicate_name,
  cycle_detected,
  bad_parent_kind,
  unknown_parent,
  invalid_name,
  ambiguous_name,
  // ingestion / storage
  unknown_resource,
  unknown_series,
  bad_range,
  empty_file,
  bad_header,
  store_corrupt,
  io_error,
  // rules / notifications
  syntax_error,
  unknown_kind,
  unknown_path,
  template_error,
  unknown_scope,
  // analytics
  too_few_points,
  no_data,
  missing_metadata,
  insufficient_history,
  // engagement
  duplicate_completion,
  unknown_quest,
  unknown_class,
  unknown_student,
  // simulator
  unknown_room,
  overlapping_scenario,
  // service
  parse_error,
  bind_error,
};

std::string_view to_string(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Condition text errors carry the 1-based token number and character column
// where parsing stopped.
class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t token, std::size_t column, const std::string& message)
      : Error(Errc::syntax_error, message), token_(token), column_(column) {}

  std::size_t token() const noexcept { return token_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t token_;
  std::size_t column_;
};

}  // namespace gaia
