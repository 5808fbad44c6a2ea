#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace patchlink {

enum class Errc {
  malformed_document,
  missing_id,
  not_found,
  registry_unreachable,
  ambiguous_match,
  fixed_tag_missing,
  no_prior_tag,
  empty_window,
  repo_access,
  no_scoreable_files,
  invalid_rank,
  degenerate_data,
  corrupt_model,
  version_mismatch,
  empty_input,
  single_class,
  empty_results,
  unknown_candidate,
  conflicting_confirm,
  invalid_argument,
};

// Stable snake_case name, used in HTTP error bodies and CLI messages.
std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace patchlink
