#include "ivfrank/evaluation.h"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_util.h"

namespace ivfrank {
namespace {

std::vector<bool> hits_from(const std::string& pattern) {
  std::vector<bool> v;
  for (char ch : pattern) v.push_back(ch == '1');
  return v;
}

TEST(McNemar, TenDiscordantPairs) {
  const auto a = hits_from("1111111111" "11111");
  const auto b = hits_from("0000000000" "11111");
  const auto r = mcnemar(a, b);
  EXPECT_EQ(r.b, 10u);
  EXPECT_EQ(r.c, 0u);
  EXPECT_NEAR(r.statistic, 8.1, 1e-12);
  // One degree of freedom: sf(x) = erfc(sqrt(x / 2)).
  EXPECT_NEAR(r.p_value, std::erfc(std::sqrt(8.1 / 2.0)), 1e-12);
  EXPECT_NEAR(r.p_value, 0.00443, 1e-5);
}

TEST(McNemar, SymmetricInArguments) {
  const auto a = hits_from("1101100101110");
  const auto b = hits_from("0111010100011");
  const auto ab = mcnemar(a, b);
  const auto ba = mcnemar(b, a);
  EXPECT_EQ(ab.b, ba.c);
  EXPECT_EQ(ab.c, ba.b);
  EXPECT_DOUBLE_EQ(ab.statistic, ba.statistic);
  EXPECT_DOUBLE_EQ(ab.p_value, ba.p_value);
}

TEST(McNemar, NoDiscordantPairs) {
  const auto a = hits_from("10110");
  const auto r = mcnemar(a, a);
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_EQ(r.p_value, 1.0);
  EXPECT_THROW(mcnemar(a, hits_from("1")), InvalidArgument);
}

TEST(ChiSquare, TabulatedCriticalValues) {
  // Upper 5% and 1% points for 1, 2, 5 and 10 degrees of freedom.
  EXPECT_NEAR(chi_square_sf(3.841458820694124, 1), 0.05, 1e-10);
  EXPECT_NEAR(chi_square_sf(6.634896601021214, 1), 0.01, 1e-10);
  EXPECT_NEAR(chi_square_sf(5.991464547107979, 2), 0.05, 1e-10);
  EXPECT_NEAR(chi_square_sf(11.070497693516351, 5), 0.05, 1e-10);
  EXPECT_NEAR(chi_square_sf(23.209251158954356, 10), 0.01, 1e-10);
  EXPECT_EQ(chi_square_sf(0.0, 3), 1.0);
  // Two degrees of freedom has the closed form exp(-x / 2).
  for (double x : {0.1, 1.0, 7.5, 40.0}) EXPECT_NEAR(chi_square_sf(x, 2), std::exp(-x / 2), 1e-13);
}

TEST(ChiSquare, MatchesErfcForOneDof) {
  for (double x = 0.05; x < 60.0; x *= 1.7) {
    const double ref = std::erfc(std::sqrt(x / 2.0));
    EXPECT_NEAR(chi_square_sf(x, 1), ref, 1e-12 + 1e-10 * ref) << x;
  }
}

RoutingModel model_from(FloatMatrix w) {
  RoutingModel m;
  m.weights = std::move(w);
  return m;
}

LabeledQuerySet single_labels(FloatMatrix queries, std::vector<idx_t> targets, std::size_t L) {
  LabeledQuerySet labels;
  labels.queries = QuerySet(std::move(queries));
  labels.num_partitions = L;
  labels.k = 1;
  for (idx_t t : targets) labels.targets.push_back({t});
  return labels;
}

TEST(Mrr, PerfectAndWorstCases) {
  FloatMatrix eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0f;
  const auto model = model_from(eye);
  EXPECT_DOUBLE_EQ(mrr(single_labels(eye, {0, 1, 2}, 3), model), 1.0);
  // Scores (1, 0, 0) for each query: target 2 sits last after the tie break.
  FloatMatrix q(2, 3, {1.0f, 0.0f, 0.0f, 1.0f, 0.0f, 0.0f});
  EXPECT_DOUBLE_EQ(mrr(single_labels(q, {2, 1}, 3), model), (1.0 / 3.0 + 1.0 / 2.0) / 2.0);
}

TEST(Mrr, MatchesBruteForceRanks) {
  const auto w = testing::random_matrix(8, 5, 1);
  const auto queries = testing::random_matrix(50, 5, 2);
  std::vector<idx_t> targets(50);
  for (std::size_t i = 0; i < 50; ++i) targets[i] = static_cast<idx_t>((i * 5) % 8);
  double expected = 0.0;
  for (std::size_t i = 0; i < 50; ++i) {
    std::vector<float> s(8);
    for (std::size_t l = 0; l < 8; ++l) s[l] = dot(w.row(l), queries.row(i));
    std::size_t rank = 1;
    for (std::size_t l = 0; l < 8; ++l) {
      if (s[l] > s[targets[i]] || (s[l] == s[targets[i]] && l < targets[i])) ++rank;
    }
    EXPECT_EQ(partition_rank(s, targets[i]), rank);
    expected += 1.0 / double(rank);
  }
  EXPECT_NEAR(mrr(single_labels(queries, targets, 8), model_from(w)), expected / 50.0, 1e-12);
}

TEST(Mrr, RejectsMultiLabel) {
  auto labels = single_labels(testing::random_matrix(1, 2, 1), {0}, 3);
  labels.k = 2;
  labels.targets[0] = {0, 1};
  EXPECT_THROW(mrr(labels, model_from(testing::random_matrix(3, 2, 2))), InvalidArgument);
}

struct EvalFixture : ::testing::Test {
  EvalFixture()
      : collection(synth_clustered(3000, 8, 10, 0.3, 31)),
        queries(synth_queries(200, 8, 10, 0.3, 31, 32)) {
    ClusteringParams params;
    params.num_partitions = 20;
    params.seed = 33;
    partitioning = kmeans_spherical(collection, params);
    model = baseline_model(partitioning);
    truth = compute_ground_truth(queries, collection, 10);
  }
  VectorCollection collection;
  QuerySet queries;
  Partitioning partitioning;
  RoutingModel model;
  GroundTruth truth;
};

TEST_F(EvalFixture, FullBudgetIsPerfect) {
  for (std::size_t k : {1u, 10u}) {
    EXPECT_EQ(topk_accuracy(queries, truth, partitioning, model, ProbeBudget::percent(100), k),
              1.0);
  }
}

TEST_F(EvalFixture, TopOneMatchesHitIndicator) {
  for (std::size_t ell : {1u, 2u, 5u}) {
    const auto budget = ProbeBudget::absolute(ell);
    const auto hits = top1_hits(queries, truth, partitioning, model, budget);
    std::size_t expected = 0;
    for (std::size_t i = 0; i < queries.count(); ++i) {
      const auto probed = route(queries[i], model, ell);
      const idx_t target = partitioning.assignment[truth.neighbors[i][0]];
      const bool hit = std::find(probed.begin(), probed.end(), target) != probed.end();
      EXPECT_EQ(hits[i], hit);
      expected += hit;
    }
    EXPECT_DOUBLE_EQ(topk_accuracy(queries, truth, partitioning, model, budget, 1),
                     double(expected) / double(queries.count()));
  }
}

TEST_F(EvalFixture, AccuracyMonotoneInBudget) {
  for (std::size_t k : {1u, 10u}) {
    double previous = 0.0;
    for (std::size_t ell = 1; ell <= 20; ++ell) {
      const double acc =
          topk_accuracy(queries, truth, partitioning, model, ProbeBudget::absolute(ell), k);
      EXPECT_GE(acc, previous);
      previous = acc;
    }
  }
}

TEST_F(EvalFixture, GroundTruthMatchesOracle) {
  for (std::size_t i = 0; i < queries.count(); i += 17) {
    EXPECT_EQ(truth.neighbors[i], exact_topk(queries[i], collection, 10).ids);
  }
  const double with_truth =
      topk_accuracy(queries, truth, partitioning, model, ProbeBudget::absolute(3), 10);
  EXPECT_DOUBLE_EQ(
      topk_accuracy(queries, collection, partitioning, model, ProbeBudget::absolute(3), 10),
      with_truth);
}

TEST_F(EvalFixture, SweepCellsMatchDirectAccuracy) {
  auto other = model;
  other.weights = testing::random_matrix(20, 8, 34);
  const std::vector<NamedModel> models = {{"baseline", model}, {"noise", other}};
  const auto ells = default_ell_grid();
  const auto ks = default_k_grid();
  const auto report = sweep(queries, collection, partitioning, models, ells, ks);
  ASSERT_EQ(report.rows.size(), models.size() * ells.size() * ks.size());
  std::size_t n = 0;
  for (const auto& m : models) {
    for (const auto& ell : ells) {
      for (std::size_t k : ks) {
        const auto& row = report.rows[n++];
        EXPECT_EQ(row.model, m.name);
        EXPECT_EQ(row.k, k);
        EXPECT_EQ(row.ell_abs, ell.resolve(20));
        EXPECT_EQ(row.n_queries, queries.count());
        EXPECT_EQ(row.accuracy, topk_accuracy(queries, truth, partitioning, m.model, ell, k));
      }
    }
  }
  EXPECT_EQ(report.top1_hits.size(), 2u);
  EXPECT_EQ(report.top1_hits[0][2],
            top1_hits(queries, truth, partitioning, model, ells[2]));
}

TEST_F(EvalFixture, SweepCsvRoundTrip) {
  testing::TempDir dir("sweep");
  const auto report = sweep(queries, collection, partitioning, {{"baseline", model}},
                            default_ell_grid(), default_k_grid());
  write_sweep_csv(report, dir / "s.csv");
  const auto bytes = testing::read_bytes(dir / "s.csv");
  const std::string text(bytes.begin(), bytes.end());
  EXPECT_EQ(text.substr(0, text.find('\n')), "model,algorithm,ell_pct,ell_abs,k,accuracy,n_queries");
  const auto rows = read_sweep_csv(dir / "s.csv");
  ASSERT_EQ(rows.size(), report.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].model, report.rows[i].model);
    EXPECT_EQ(rows[i].algorithm, "spherical");
    EXPECT_EQ(rows[i].ell_pct, report.rows[i].ell_pct);
    EXPECT_EQ(rows[i].ell_abs, report.rows[i].ell_abs);
    EXPECT_EQ(rows[i].k, report.rows[i].k);
    EXPECT_EQ(rows[i].accuracy, report.rows[i].accuracy);
  }
}

}  // namespace
}  // namespace ivfrank
