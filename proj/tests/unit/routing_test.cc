#include "ivfrank/routing.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "test_util.h"

namespace ivfrank {
namespace {

RoutingModel model_from(FloatMatrix w) {
  RoutingModel m;
  m.weights = std::move(w);
  return m;
}

FloatMatrix identity(std::size_t n) {
  FloatMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

TEST(ScorePartitions, IdentityReturnsQuery) {
  const auto model = model_from(identity(4));
  const std::vector<float> q = {0.5f, -1.0f, 2.0f, 3.0f};
  EXPECT_EQ(score_partitions(q, model), q);
}

TEST(ScorePartitions, ZeroQueryGivesZeroScores) {
  const auto model = model_from(testing::random_matrix(6, 5, 1));
  EXPECT_EQ(score_partitions(std::vector<float>(5, 0.0f), model), std::vector<float>(6, 0.0f));
}

TEST(ScorePartitions, MatchesNaiveProduct) {
  const auto w = testing::random_matrix(50, 16, 2);
  const auto model = model_from(w);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto q = testing::random_vector(16, rng);
    const auto s = score_partitions(q, model);
    for (std::size_t l = 0; l < 50; ++l) {
      double ref = 0.0;
      for (std::size_t j = 0; j < 16; ++j) ref += double(w(l, j)) * q[j];
      EXPECT_NEAR(s[l], ref, 1e-5 * (1.0 + std::abs(ref)));
    }
  }
}

TEST(ScorePartitions, DimensionMismatch) {
  const auto model = model_from(identity(3));
  EXPECT_THROW(score_partitions(std::vector<float>(4, 1.0f), model), InvalidArgument);
}

TEST(Route, PicksBestPartition) {
  const auto model = model_from(identity(3));
  EXPECT_EQ(route(std::vector<float>{0.0f, 0.0f, 1.0f}, model, 1), (std::vector<idx_t>{2}));
}

TEST(Route, FullBudgetIsPermutation) {
  const auto model = model_from(testing::random_matrix(30, 8, 4));
  std::mt19937_64 rng(5);
  const auto q = testing::random_vector(8, rng);
  auto r = route(q, model, 30);
  std::sort(r.begin(), r.end());
  std::vector<idx_t> all(30);
  std::iota(all.begin(), all.end(), idx_t{0});
  EXPECT_EQ(r, all);
}

TEST(Route, EqualsSortThenTruncate) {
  const auto model = model_from(testing::random_matrix(40, 8, 6));
  std::mt19937_64 rng(7);
  for (int t = 0; t < 30; ++t) {
    const auto q = testing::random_vector(8, rng);
    const auto s = score_partitions(q, model);
    std::vector<idx_t> order(40);
    std::iota(order.begin(), order.end(), idx_t{0});
    std::stable_sort(order.begin(), order.end(), [&](idx_t a, idx_t b) { return s[a] > s[b]; });
    for (std::size_t ell : {1u, 3u, 17u, 40u}) {
      EXPECT_EQ(route(q, model, ell), std::vector<idx_t>(order.begin(), order.begin() + ell));
    }
  }
}

TEST(Route, TiesGoToLowerIndex) {
  const std::vector<float> scores = {1.0f, 2.0f, 2.0f, 0.5f, 2.0f};
  EXPECT_EQ(top_partitions(scores, 3), (std::vector<idx_t>{1, 2, 4}));
  EXPECT_EQ(top_partitions(scores, 5), (std::vector<idx_t>{1, 2, 4, 0, 3}));
}

TEST(Route, InvariantToPositiveScaling) {
  const auto w = testing::random_matrix(25, 6, 8);
  const auto model = model_from(w);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const auto q = testing::random_vector(6, rng);
    auto scaled = q;
    for (float& v : scaled) v *= 4.0f;
    EXPECT_EQ(route(q, model, 5), route(scaled, model, 5));
  }
}

TEST(Route, EllOutOfRange) {
  const auto model = model_from(identity(3));
  const std::vector<float> q = {1.0f, 0.0f, 0.0f};
  EXPECT_THROW(route(q, model, 0), InvalidArgument);
  EXPECT_THROW(route(q, model, 4), InvalidArgument);
}

TEST(ProbeBudget, ParseAndResolve) {
  EXPECT_EQ(ProbeBudget::parse("5").resolve(316), 5u);
  EXPECT_EQ(ProbeBudget::parse("0.1%").resolve(316), 1u);
  EXPECT_EQ(ProbeBudget::parse("1%").resolve(316), 4u);
  EXPECT_EQ(ProbeBudget::parse("10%").resolve(316), 32u);
  EXPECT_EQ(ProbeBudget::parse("100%").resolve(316), 316u);
  EXPECT_EQ(ProbeBudget::parse("10%").resolve(100), 10u);
  EXPECT_EQ(ProbeBudget::percent(0.5).resolve(316), 2u);
  EXPECT_TRUE(ProbeBudget::parse("2%").is_percent());
  EXPECT_FALSE(ProbeBudget::parse("2").is_percent());
  EXPECT_THROW(ProbeBudget::parse("abc"), InvalidArgument);
  EXPECT_THROW(ProbeBudget::parse("0%"), InvalidArgument);
  EXPECT_THROW(ProbeBudget::parse("0"), InvalidArgument);
  EXPECT_THROW(ProbeBudget::absolute(400).resolve(316), InvalidArgument);
}

struct SearchFixture : ::testing::Test {
  SearchFixture() : collection(testing::random_collection(3000, 12, 10)) {
    ClusteringParams params;
    params.num_partitions = 30;
    params.seed = 11;
    partitioning = kmeans_spherical(collection, params);
    model = baseline_model(partitioning);
  }
  VectorCollection collection;
  Partitioning partitioning;
  RoutingModel model;
};

TEST_F(SearchFixture, FullBudgetEqualsExhaustive) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto q = testing::random_vector(12, rng);
    const auto r = search(q, model, partitioning, collection, ProbeBudget::percent(100), 10);
    EXPECT_EQ(r.ids, exact_topk(q, collection, 10).ids);
  }
}

TEST_F(SearchFixture, ResultsComeFromProbedPartitions) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    const auto q = testing::random_vector(12, rng);
    const auto probed = route(q, model, 3);
    const std::set<idx_t> probed_set(probed.begin(), probed.end());
    const auto r = search(q, model, partitioning, collection, ProbeBudget::absolute(3), 10);
    for (idx_t id : r.ids) EXPECT_TRUE(probed_set.count(partitioning.assignment[id])) << id;
  }
}

TEST_F(SearchFixture, BaselineTopOneEqualsAssignment) {
  for (std::size_t i = 0; i < collection.count(); ++i) {
    EXPECT_EQ(route(collection[i], model, 1)[0], partitioning.assignment[i]) << i;
  }
}

TEST_F(SearchFixture, BaselineIsRepresentatives) {
  EXPECT_EQ(model.provenance, Provenance::kBaseline);
  EXPECT_TRUE(testing::bit_equal(model.weights.data(), partitioning.representatives.data()));
}

TEST(Checkpoint, RoundTrip) {
  testing::TempDir dir("model");
  RoutingModel m = model_from(testing::random_matrix(7, 5, 14));
  m.provenance = Provenance::kLearnt;
  m.run_id = "seed3-epoch12";
  save_model(m, dir / "sub" / "model");
  const auto back = load_model(dir / "sub" / "model");
  EXPECT_TRUE(testing::bit_equal(back.weights.data(), m.weights.data()));
  EXPECT_EQ(back.weights.rows(), 7u);
  EXPECT_EQ(back.provenance, Provenance::kLearnt);
  EXPECT_EQ(back.run_id, m.run_id);
  EXPECT_THROW(load_model(dir / "missing"), IoError);
}

}  // namespace
}  // namespace ivfrank
