#pragma once

// Cosine-threshold preimage retrieval over per-subspace activation databases.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ndm/activation_io.hpp"
#include "ndm/ndm.hpp"

namespace ndm {

inline constexpr double kDefaultPreimageThreshold = 0.85;

struct SubspaceIndex {
  std::size_t subspace = 0;
  Matrix vectors;  // n x d_s, rotated and block-extracted
  std::vector<double> norms;
  std::vector<TokenMeta> meta;
};

struct PreimageHit {
  double similarity = 0.0;
  std::size_t row = 0;
  std::string doc_id;
  std::int64_t position = 0;
  bool self = false;
};

// Throws Errc::missing_metadata when the set has rows but no metadata.
std::vector<SubspaceIndex> build_index(const ActivationSet& set, const Partition& p);

// Optional source identifies the query token so its own row can be flagged.
struct QuerySource {
  std::string doc_id;
  std::int64_t position = 0;
};

std::vector<PreimageHit> query(const SubspaceIndex& index, const Vector& q, double threshold,
                               std::size_t top_k, const std::optional<QuerySource>& source = std::nullopt);

struct ContextWindow {
  std::size_t before = 30;
  std::size_t after = 5;
};

// One line per hit: "sim  pos  context", with the hit token in [[ ]].
std::string render(const std::vector<PreimageHit>& hits, const std::vector<TokenMeta>& corpus,
                   const ContextWindow& window = {});

}  // namespace ndm
