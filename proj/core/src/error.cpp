#include "ndm/error.hpp"

namespace ndm {

std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::contract_violation: return "ContractViolation";
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::non_finite: return "NonFinite";
    case Errc::io_failure: return "IoFailure";
    case Errc::magic_mismatch: return "MagicMismatch";
    case Errc::version_mismatch: return "VersionMismatch";
    case Errc::truncated: return "Truncated";
    case Errc::not_orthogonal: return "NotOrthogonal";
    case Errc::buffer_exhausted: return "BufferExhausted";
    case Errc::degenerate_subspace: return "DegenerateSubspace";
    case Errc::zero_variance: return "ZeroVariance";
    case Errc::no_effect: return "NoEffect";
    case Errc::missing_metadata: return "MissingMetadata";
  }
  return "Unknown";
}

}  // namespace ndm
