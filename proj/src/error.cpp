#include "gaia/error.hpp"

namespace gaia {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::validation_failed: return "ValidationFailed";
    case Errc::unauthorized: return "Unauthorized";
    case Errc::not_found: return "NotFound";
    case Errc::conflict: return "Conflict";
    case Errc::duplicate_id: return "DuplicateId";
    case Errc::duplicate_name: return "DuplicateName";
    case Errc::cycle_detected: return "CycleDetected";
    case Errc::bad_parent_kind: return "BadParentKind";
    case Errc::unknown_parent: return "UnknownParent";
    case Errc::invalid_name: return "InvalidName";
    case Errc::ambiguous_name: return "AmbiguousName";
    case Errc::unknown_resource: return "UnknownResource";
    case Errc::unknown_series: return "UnknownSeries";
    case Errc::bad_range: return "BadRange";
    case Errc::empty_file: return "EmptyFile";
    case Errc::bad_header: return "BadHeader";
    case Errc::store_corrupt: return "StoreCorrupt";
    case Errc::io_error: return "IoError";
    case Errc::syntax_error: return "SyntaxError";
    case Errc::unknown_kind: return "UnknownKind";
    case Errc::unknown_path: return "UnknownPath";
    case Errc::template_error: return "TemplateError";
    case Errc::unknown_scope: return "UnknownScope";
    case Errc::too_few_points: return "TooFewPoints";
    case Errc::no_data: return "NoData";
    case Errc::missing_metadata: return "MissingMetadata";
    case Errc::insufficient_history: return "InsufficientHistory";
    case Errc::duplicate_completion: return "DuplicateCompletion";
    case Errc::unknown_quest: return "UnknownQuest";
    case Errc::unknown_class: return "UnknownClass";
    case Errc::unknown_student: return "UnknownStudent";
    case Errc::unknown_room: return "UnknownRoom";
    case Errc::overlapping_scenario: return "OverlappingScenario";
    case Errc::parse_error: return "ParseError";
    case Errc::bind_error: return "BindError";
  }
  return "Unknown";
}

}  // namespace gaia
