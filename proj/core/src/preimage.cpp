#include "ndm/preimage.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <utility>

#include "ndm/error.hpp"

namespace ndm {

std::vector<SubspaceIndex> build_index(const ActivationSet& set, const Partition& p) {
  require(set.dim() == p.dim(), Errc::shape_mismatch, "activation width must match the partition");
  std::vector<SubspaceIndex> out;
  if (set.rows() == 0) return out;
  require(set.has_meta(), Errc::missing_metadata, "preimage search needs token metadata (.meta sidecar)");
  set.validate();
  const Matrix proj = set.data * p.rotation().transpose();
  const auto parts = subspace_split(proj, p.config());
  for (std::size_t s = 0; s < parts.size(); ++s) {
    SubspaceIndex idx;
    idx.subspace = s;
    idx.vectors = parts[s];
    idx.norms.resize(set.rows());
    for (Eigen::Index i = 0; i < idx.vectors.rows(); ++i) idx.norms[static_cast<std::size_t>(i)] = idx.vectors.row(i).norm();
    idx.meta = set.meta;
    out.push_back(std::move(idx));
  }
  return out;
}

std::vector<PreimageHit> query(const SubspaceIndex& index, const Vector& q, double threshold, std::size_t top_k,
                               const std::optional<QuerySource>& source) {
  require(q.size() == index.vectors.cols(), Errc::shape_mismatch, "query width must match the subspace");
  const double qn = q.norm();
  require(qn > 0.0, Errc::invalid_argument, "query vector has zero norm");
  require(std::isfinite(qn), Errc::non_finite, "query vector is not finite");

  const Vector sims = index.vectors * (q / qn);
  std::vector<PreimageHit> hits;
  for (Eigen::Index i = 0; i < sims.size(); ++i) {
    const auto row = static_cast<std::size_t>(i);
    if (index.norms[row] == 0.0) continue;
    const double sim = std::clamp(sims[i] / index.norms[row], -1.0, 1.0);
    if (sim < threshold) continue;
    PreimageHit h;
    h.similarity = sim;
    h.row = row;
    if (row < index.meta.size()) {
      h.doc_id = index.meta[row].doc_id;
      h.position = index.meta[row].position;
      h.self = source && source->doc_id == h.doc_id && source->position == h.position;
    }
    hits.push_back(std::move(h));
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const PreimageHit& a, const PreimageHit& b) { return a.similarity > b.similarity; });
  if (hits.size() > top_k) hits.resize(top_k);
  return hits;
}

std::string render(const std::vector<PreimageHit>& hits, const std::vector<TokenMeta>& corpus,
                   const ContextWindow& window) {
  // Tokens of each document ordered by position.
  std::map<std::string, std::map<std::int64_t, const TokenMeta*>> docs;
  for (const auto& m : corpus) docs[m.doc_id][m.position] = &m;

  std::ostringstream os;
  os << "sim     pos   context\n";
  for (const auto& h : hits) {
    char head[48];
    std::snprintf(head, sizeof head, "%.3f  %5lld  ", h.similarity, static_cast<long long>(h.position));
    os << head;
    const auto it = docs.find(h.doc_id);
    if (it != docs.end()) {
      const auto& tokens = it->second;
      const auto lo = h.position - static_cast<std::int64_t>(window.before);
      const auto hi = h.position + static_cast<std::int64_t>(window.after);
      for (auto t = tokens.lower_bound(lo); t != tokens.end() && t->first <= hi; ++t) {
        if (t->first == h.position)
          os << "[[" << t->second->token_text << "]]";
        else
          os << t->second->token_text;
      }
    }
    if (h.self) os << "  (self)";
    os << '\n';
  }
  return os.str();
}

}  // namespace ndm
