#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ndm {

enum class Errc {
  contract_violation,
  invalid_argument,
  shape_mismatch,
  non_finite,
  io_failure,
  magic_mismatch,
  version_mismatch,
  truncated,
  not_orthogonal,
  buffer_exhausted,
  degenerate_subspace,
  zero_variance,
  no_effect,
  missing_metadata,
};

std::string_view to_string(Errc code) noexcept;

// Every recoverable failure in the library is reported as an ndm::Error; the
// code lets callers (and tests) distinguish e.g. a truncated file from a
// magic mismatch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

inline void require(bool cond, Errc code, const char* what) {
  if (!cond) throw Error(code, what);
}

}  // namespace ndm
