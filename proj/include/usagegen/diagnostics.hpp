#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace usagegen {

// Diagnostic and error codes. Model/file problems map to CLI exit 1,
// infeasibility-class problems to exit 2, resource limits to exit 3,
// configuration/usage problems to exit 4.
namespace codes {
// model / file
inline constexpr std::string_view schema = "E_SCHEMA";
inline constexpr std::string_view prob = "E_PROB";
inline constexpr std::string_view rowsum = "E_ROWSUM";
inline constexpr std::string_view unknown_ref = "E_UNKNOWN_REF";
inline constexpr std::string_view dup_row = "E_DUP_ROW";
inline constexpr std::string_view missing_row = "E_MISSING_ROW";
inline constexpr std::string_view order = "E_ORDER";
// infeasibility
inline constexpr std::string_view infeasible = "E_INFEASIBLE";
inline constexpr std::string_view zero_context = "E_ZERO_CONTEXT";
inline constexpr std::string_view stuck = "E_STUCK";
inline constexpr std::string_view stall = "E_STALL";
inline constexpr std::string_view not_ergodic = "E_NOT_ERGODIC";
// resources
inline constexpr std::string_view too_large = "E_TOO_LARGE";
// configuration / usage
inline constexpr std::string_view config = "E_CONFIG";
inline constexpr std::string_view shape = "E_SHAPE";
inline constexpr std::string_view alpha = "E_ALPHA";
inline constexpr std::string_view merge_scope = "E_MERGE_SCOPE";
inline constexpr std::string_view no_ranges = "E_NO_RANGES";
inline constexpr std::string_view out_of_range = "E_OUT_OF_RANGE";
// warnings
inline constexpr std::string_view zero_class = "W_ZERO_CLASS";
inline constexpr std::string_view unsat_requirement = "W_UNSAT_REQUIREMENT";
}  // namespace codes

enum class Severity { error, warning };

// One finding of parse_model or validate_model. `path` addresses the
// offending element in the source document (JSON-pointer style).
struct Diagnostic {
  Severity severity = Severity::error;
  std::string path;
  std::string code;
  std::string message;

  bool operator==(const Diagnostic&) const = default;
};

struct ValidationReport {
  std::vector<Diagnostic> entries;

  bool ok() const {
    for (const auto& d : entries)
      if (d.severity == Severity::error) return false;
    return true;
  }
  std::size_t error_count() const {
    std::size_t n = 0;
    for (const auto& d : entries)
      if (d.severity == Severity::error) ++n;
    return n;
  }
  std::size_t warning_count() const { return entries.size() - error_count(); }
};

// Thrown by operations whose contract names an error code.
class UsageError : public std::runtime_error {
 public:
  UsageError(std::string_view code, const std::string& message)
      : std::runtime_error(std::string(code) + ": " + message),
        code_(code) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace usagegen
