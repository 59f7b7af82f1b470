#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "ndm/error.hpp"
#include "ndm/preimage.hpp"
#include "oracles.hpp"

using namespace ndm;

namespace {

ActivationSet with_meta(Matrix data, const std::string& doc = "doc") {
  ActivationSet set;
  set.data = std::move(data);
  for (Eigen::Index i = 0; i < set.data.rows(); ++i)
    set.meta.push_back(TokenMeta{doc, i, " t" + std::to_string(i)});
  return set;
}

SubspaceIndex single_index(const Matrix& rows) {
  const auto d = static_cast<std::size_t>(rows.cols());
  return build_index(with_meta(rows), Partition::identity(d, {d})).at(0);
}

// Reference: plain loop, cosine with explicit norms, no sorting.
std::set<std::size_t> brute_force(const Matrix& rows, const Vector& q, double threshold) {
  std::set<std::size_t> out;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    double dot = 0, nr = 0, nq = 0;
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      dot += rows(i, j) * q[j];
      nr += rows(i, j) * rows(i, j);
      nq += q[j] * q[j];
    }
    if (nr > 0 && dot / std::sqrt(nr * nq) >= threshold) out.insert(static_cast<std::size_t>(i));
  }
  return out;
}

std::set<std::size_t> rows_of(const std::vector<PreimageHit>& hits) {
  std::set<std::size_t> out;
  for (const auto& h : hits) out.insert(h.row);
  return out;
}

}  // namespace

TEST(BuildIndex, EmptySetGivesNoIndices) {
  ActivationSet set;
  set.data.resize(0, 4);
  EXPECT_TRUE(build_index(set, Partition::identity(4, {2, 2})).empty());
}

TEST(BuildIndex, SingleSubspaceEqualsRotatedSet) {
  std::mt19937_64 rng(1);
  const auto set = with_meta(oracle::gaussian(20, 5, rng));
  auto st = make_stream(1, "r");
  const Partition p(random_orthogonal(5, st), {5});
  const auto idx = build_index(set, p);
  ASSERT_EQ(idx.size(), 1u);
  EXPECT_LE((idx[0].vectors - set.data * p.rotation().transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(BuildIndex, RowCountsAndWidthsPerSubspace) {
  std::mt19937_64 rng(2);
  const auto set = with_meta(oracle::gaussian(33, 6, rng));
  const auto idx = build_index(set, Partition::identity(6, {3, 2, 1}));
  ASSERT_EQ(idx.size(), 3u);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(idx[s].vectors.rows(), 33);
    EXPECT_EQ(idx[s].meta.size(), 33u);
    EXPECT_EQ(idx[s].subspace, s);
  }
  EXPECT_EQ(idx[0].vectors.cols(), 3);
  EXPECT_EQ(idx[2].vectors.cols(), 1);
}

TEST(BuildIndex, MissingMetadataIsAnError) {
  ActivationSet set;
  set.data = Matrix::Ones(3, 2);
  try {
    build_index(set, Partition::identity(2, {1, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::missing_metadata);
  }
}

TEST(Query, StoredRowIsFoundWithSimilarityOne) {
  std::mt19937_64 rng(3);
  const Matrix rows = oracle::gaussian(50, 4, rng);
  const auto idx = single_index(rows);
  const Vector q = rows.row(17).transpose();
  const auto hits = query(idx, q, kDefaultPreimageThreshold, 10, QuerySource{"doc", 17});
  ASSERT_FALSE(hits.empty());
  EXPECT_EQ(hits[0].row, 17u);
  EXPECT_NEAR(hits[0].similarity, 1.0, 1e-12);
  EXPECT_TRUE(hits[0].self);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_FALSE(hits[i].self);
}

TEST(Query, OrthogonalQueryFindsNothing) {
  Matrix rows(3, 3);
  rows << 1, 0, 0, 0, 2, 0, 1, 1, 0;
  EXPECT_TRUE(query(single_index(rows), Vector::Unit(3, 2), 0.85, 10).empty());
}

TEST(Query, HandComputedCosines) {
  Matrix rows(3, 2);
  rows << 1, 0, 0, 1, 1 / std::sqrt(2.0), 1 / std::sqrt(2.0);
  const auto hits = query(single_index(rows), Vector::Unit(2, 0), 0.7, 10);
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].row, 0u);
  EXPECT_NEAR(hits[0].similarity, 1.0, 1e-12);
  EXPECT_EQ(hits[1].row, 2u);
  EXPECT_NEAR(hits[1].similarity, std::sqrt(0.5), 1e-12);
}

TEST(Query, ZeroQueryIsAnError) {
  Matrix rows = Matrix::Identity(2, 2);
  EXPECT_THROW(query(single_index(rows), Vector::Zero(2), 0.5, 3), Error);
}

TEST(Query, TopKTruncatesAfterSorting) {
  std::mt19937_64 rng(4);
  const Matrix rows = oracle::gaussian(400, 2, rng);
  const auto idx = single_index(rows);
  const Vector q = Vector::Unit(2, 1);
  const auto all = query(idx, q, 0.0, 1000);
  const auto top = query(idx, q, 0.0, 5);
  ASSERT_EQ(top.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(top[i].row, all[i].row);
  for (std::size_t i = 1; i < all.size(); ++i) EXPECT_GE(all[i - 1].similarity, all[i].similarity);
}

TEST(Query, ScalingInvariantAndMonotoneInThreshold) {
  std::mt19937_64 rng(5);
  const Matrix rows = oracle::gaussian(2000, 3, rng);
  const auto idx = single_index(rows);
  const Vector q = oracle::gaussian(3, 1, rng).col(0);
  const auto base = rows_of(query(idx, q, 0.8, 100000));
  EXPECT_EQ(rows_of(query(idx, q * 1e-3, 0.8, 100000)), base);
  EXPECT_EQ(rows_of(query(idx, q * 250.0, 0.8, 100000)), base);
  std::set<std::size_t> previous;
  for (double t : {0.99, 0.95, 0.9, 0.8, 0.5, 0.0}) {
    const auto now = rows_of(query(idx, q, t, 100000));
    EXPECT_TRUE(std::includes(now.begin(), now.end(), previous.begin(), previous.end())) << t;
    previous = now;
  }
}

TEST(Query, MatchesBruteForceOnLargeIndex) {
  std::mt19937_64 rng(6);
  Matrix rows = oracle::gaussian(10000, 8, rng);
  rows.row(10).setZero();
  const auto idx = single_index(rows);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector q = oracle::gaussian(8, 1, rng).col(0);
    for (double t : {0.85, 0.7, 0.3}) EXPECT_EQ(rows_of(query(idx, q, t, 100000)), brute_force(rows, q, t));
  }
}

TEST(Render, LayoutHighlightAndWindow) {
  ActivationSet set;
  set.data = Matrix::Ones(8, 2);
  for (int i = 0; i < 8; ++i) set.meta.push_back(TokenMeta{"a", i, "w" + std::to_string(i) + " "});
  PreimageHit hit;
  hit.similarity = 0.91234;
  hit.row = 5;
  hit.doc_id = "a";
  hit.position = 5;
  hit.self = true;
  const std::string out = render({hit}, set.meta, ContextWindow{2, 1});
  EXPECT_EQ(out.substr(0, out.find('\n')), "sim     pos   context");
  EXPECT_NE(out.find("0.912"), std::string::npos);
  EXPECT_NE(out.find("w3 w4 [[w5 ]]w6 "), std::string::npos);
  EXPECT_EQ(out.find("w2"), std::string::npos);
  EXPECT_EQ(out.find("w7"), std::string::npos);
  EXPECT_NE(out.find("(self)"), std::string::npos);
}
