#include "patchlink/error.hpp"
#include "patchlink/hashing.hpp"

#include <cstdio>

namespace patchlink {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::malformed_document: return "malformed_document";
    case Errc::missing_id: return "missing_id";
    case Errc::not_found: return "not_found";
    case Errc::registry_unreachable: return "registry_unreachable";
    case Errc::ambiguous_match: return "ambiguous_match";
    case Errc::fixed_tag_missing: return "fixed_tag_missing";
    case Errc::no_prior_tag: return "no_prior_tag";
    case Errc::empty_window: return "empty_window";
    case Errc::repo_access: return "repo_access";
    case Errc::no_scoreable_files: return "no_scoreable_files";
    case Errc::invalid_rank: return "invalid_rank";
    case Errc::degenerate_data: return "degenerate_data";
    case Errc::corrupt_model: return "corrupt_model";
    case Errc::version_mismatch: return "version_mismatch";
    case Errc::empty_input: return "empty_input";
    case Errc::single_class: return "single_class";
    case Errc::empty_results: return "empty_results";
    case Errc::unknown_candidate: return "unknown_candidate";
    case Errc::conflicting_confirm: return "conflicting_confirm";
    case Errc::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace patchlink
