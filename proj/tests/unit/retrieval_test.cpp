#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "cir/error.hpp"
#include "cir/retrieval.hpp"
#include "oracles.hpp"

namespace cir {
namespace {

using testing::oracle_full_sort;
using testing::oracle_rank;

EmbeddingMatrix matrix(std::size_t dims, std::vector<std::string> ids,
                       std::vector<float> values) {
  return EmbeddingMatrix(dims, std::move(ids), std::move(values));
}

// Random gallery with some duplicated rows so that exact score ties occur.
EmbeddingMatrix random_gallery(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<std::string> ids;
  std::set<std::string> seen;
  while (ids.size() < n) {
    std::string id = "id" + std::to_string(rng.below(10 * n));
    if (seen.insert(id).second) ids.push_back(id);
  }
  std::vector<float> values(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && rng.uniform() < 0.2) {
      const std::size_t src = rng.below(i);
      std::copy_n(values.begin() + src * d, d, values.begin() + i * d);
      continue;
    }
    for (std::size_t j = 0; j < d; ++j) {
      values[i * d + j] = static_cast<float>(rng.uniform(-1, 1));
    }
  }
  return EmbeddingMatrix(d, ids, values);
}

std::vector<double> random_query(Rng& rng, std::size_t d) {
  std::vector<double> q(d);
  for (auto& x : q) x = rng.uniform(-1, 1);
  return q;
}

TEST(BuildIndex, RowsAreUnitNorm) {
  const auto idx = build_index(matrix(2, {"a", "b", "c"}, {3, 4, 1, 0, 0, 2}));
  ASSERT_EQ(idx.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    double n = 0;
    for (double x : idx.row(i)) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
  EXPECT_NEAR(idx.row(0)[0], 0.6, 1e-12);
}

TEST(BuildIndex, ZeroRowNamesId) {
  try {
    build_index(matrix(2, {"a", "zeroed"}, {1, 1, 0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateInput);
    EXPECT_NE(std::string(e.what()).find("zeroed"), std::string::npos);
  }
}

TEST(BuildIndex, Deterministic) {
  Rng rng(1);
  const auto m = random_gallery(rng, 20, 5);
  const auto a = build_index(m), b = build_index(m);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a.row(i).begin(), a.row(i).end(), b.row(i).begin()));
  }
  EXPECT_EQ(a.ids(), b.ids());
}

TEST(SearchTopk, IdentityQueryRanksFirst) {
  const auto idx = build_index(matrix(3, {"a", "b", "c"}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  const std::vector<double> q{0, 2, 0};
  const auto top = search_topk(idx, q, 1);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].id, "b");
  EXPECT_NEAR(top[0].score, 1.0, 1e-12);
}

TEST(SearchTopk, TieBreaksByAscendingId) {
  // Scores against q = e1 are 0.9, 0.2, 0.9, 0.5.
  auto row = [](double s) {
    return std::vector<float>{static_cast<float>(s),
                              static_cast<float>(std::sqrt(1 - s * s))};
  };
  std::vector<float> values;
  for (double s : {0.9, 0.2, 0.9, 0.5}) {
    auto r = row(s);
    values.insert(values.end(), r.begin(), r.end());
  }
  const auto idx = build_index(matrix(2, {"c", "b", "a", "d"}, values));
  const std::vector<double> q{1, 0};
  const auto top = search_topk(idx, q, 2);
  EXPECT_EQ(top[0].id, "a");
  EXPECT_EQ(top[1].id, "c");
}

TEST(SearchTopk, Errors) {
  const auto idx = build_index(matrix(2, {"a", "b"}, {1, 0, 0, 1}));
  const std::vector<double> q{1, 0}, zero{0, 0}, wrong{1, 0, 0};
  EXPECT_THROW(search_topk(idx, q, 0), Error);
  EXPECT_THROW(search_topk(idx, q, 3), Error);
  EXPECT_THROW(search_topk(idx, zero, 1), Error);
  EXPECT_THROW(search_topk(idx, wrong, 1), Error);
}

TEST(SearchTopk, MatchesFullSortOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(300), d = 1 + rng.below(8);
    const auto idx = build_index(random_gallery(rng, n, d));
    const auto q = random_query(rng, d);
    const auto unit = l2_normalize(std::span<const double>(q));
    const auto sorted = oracle_full_sort(idx.ids(), idx.scores(unit));
    const std::size_t k = 1 + rng.below(n);
    const auto top = search_topk(idx, q, k);
    ASSERT_EQ(top.size(), k);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_EQ(top[i].id, sorted[i].id);
      EXPECT_EQ(top[i].score, sorted[i].score);
    }
    const auto all = search_topk(idx, q, n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(all[i].id, sorted[i].id);
  }
}

TEST(SearchTopk, ScoresAreTextbookCosines) {
  Rng rng(6);
  const auto m = random_gallery(rng, 40, 6);
  const auto idx = build_index(m);
  const auto q = random_query(rng, 6);
  for (const auto& hit : search_topk(idx, q, 40)) {
    const auto row = m.row(m.index_of(hit.id));
    const std::vector<double> r(row.begin(), row.end());
    EXPECT_NEAR(hit.score, testing::oracle_cosine(q, r), 1e-12);
  }
}

TEST(SearchTopk, PositiveScalingKeepsOrder) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto idx = build_index(random_gallery(rng, 60, 4));
    auto q = random_query(rng, 4);
    const auto base = search_topk(idx, q, 60);
    for (double c : {1e-3, 0.5, 3.0, 1e4}) {
      std::vector<double> scaled(q);
      for (auto& x : scaled) x *= c;
      const auto got = search_topk(idx, scaled, 60);
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].id, base[i].id);
    }
  }
}

TEST(SearchTopkBatch, PositionAligned) {
  Rng rng(8);
  const auto idx = build_index(random_gallery(rng, 30, 3));
  Tensor qs(4, 3);
  for (double& x : qs.data) x = rng.uniform(-1, 1);
  const auto lists = search_topk_batch(idx, qs, 5);
  ASSERT_EQ(lists.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(lists[i], search_topk(idx, qs.row(i), 5));
  }
}

TEST(RankOf, Basics) {
  const auto idx = build_index(matrix(2, {"t", "o"}, {1, 0, 0, 1}));
  const std::vector<double> at_target{1, 0}, at_other{0, 1};
  EXPECT_EQ(rank_of(idx, at_target, "t"), 1u);
  EXPECT_EQ(rank_of(idx, at_other, "t"), 2u);
  EXPECT_THROW(rank_of(idx, at_target, "missing"), Error);
}

TEST(RankOf, MatchesOracleAndTopkMembership) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(200);
    const auto idx = build_index(random_gallery(rng, n, 3));
    const auto q = random_query(rng, 3);
    const auto unit = l2_normalize(std::span<const double>(q));
    const auto sorted = oracle_full_sort(idx.ids(), idx.scores(unit));
    const std::string target = idx.ids()[rng.below(n)];
    const std::size_t r = rank_of(idx, q, target);
    EXPECT_EQ(r, oracle_rank(sorted, target));
    const std::size_t k = 1 + rng.below(n);
    const auto top = search_topk(idx, q, k);
    const bool in_top = std::any_of(top.begin(), top.end(),
                                    [&](const auto& h) { return h.id == target; });
    EXPECT_EQ(r <= k, in_top);
  }
}

TEST(SubsetRank, Basics) {
  const auto idx = build_index(matrix(2, {"a", "b", "c"}, {1, 0, 0, 1, 1, 1}));
  const std::vector<double> q{0, 1};
  const std::vector<std::string> solo{"a"};
  EXPECT_EQ(subset_rank(idx, q, solo, "a"), 1u);
  const std::vector<std::string> ab{"a", "b"};
  EXPECT_EQ(subset_rank(idx, q, ab, "b"), 1u);
  const std::vector<std::string> no_target{"b", "c"};
  EXPECT_THROW(subset_rank(idx, q, no_target, "a"), Error);
  const std::vector<std::string> unknown{"a", "zz"};
  EXPECT_THROW(subset_rank(idx, q, unknown, "a"), Error);
  const std::vector<std::string> dup{"a", "a"};
  EXPECT_THROW(subset_rank(idx, q, dup, "a"), Error);
}

TEST(SubsetRank, MatchesRestrictedOracle) {
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 6 + rng.below(100);
    const auto idx = build_index(random_gallery(rng, n, 3));
    const auto q = random_query(rng, 3);
    const auto unit = l2_normalize(std::span<const double>(q));
    const auto sorted = oracle_full_sort(idx.ids(), idx.scores(unit));
    std::vector<std::string> ids = idx.ids();
    rng.shuffle(std::span<std::string>(ids));
    ids.resize(1 + rng.below(6));
    const std::string target = ids[rng.below(ids.size())];
    const std::set<std::string> subset(ids.begin(), ids.end());
    const std::size_t r = subset_rank(idx, q, ids, target);
    EXPECT_EQ(r, oracle_rank(sorted, target, &subset));
    EXPECT_LE(r, ids.size());
    EXPECT_LE(r, rank_of(idx, q, target));
  }
}

}  // namespace
}  // namespace cir
