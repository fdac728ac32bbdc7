#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ivfrank/clustering.h"
#include "ivfrank/dataset.h"
#include "ivfrank/oracle.h"
#include "ivfrank/routing.h"

namespace ivfrank {

/// Exact top-k neighbour ids per query, recomputed from the collection.
/// Accuracy at any k' <= k uses the first k' ids.
struct GroundTruth {
  std::size_t k = 0;
  std::vector<std::vector<idx_t>> neighbors;
};

GroundTruth compute_ground_truth(const QuerySet& queries, const VectorCollection& collection,
                                 std::size_t k);

/// Mean over queries of |{exact top-k ids whose partition is among the
/// routed ell}| / k.
double topk_accuracy(const QuerySet& queries, const GroundTruth& truth,
                     const Partitioning& partitioning, const RoutingModel& model,
                     const ProbeBudget& budget, std::size_t k);
double topk_accuracy(const QuerySet& queries, const VectorCollection& collection,
                     const Partitioning& partitioning, const RoutingModel& model,
                     const ProbeBudget& budget, std::size_t k);

/// Per-query top-1 hit: the exact nearest neighbour's partition is routed.
std::vector<bool> top1_hits(const QuerySet& queries, const GroundTruth& truth,
                            const Partitioning& partitioning, const RoutingModel& model,
                            const ProbeBudget& budget);

/// 1-based position of `partition` in the full routing order of `scores`.
std::size_t partition_rank(std::span<const float> scores, idx_t partition);

/// Mean reciprocal rank of each query's single labeled partition in the full
/// routing order. Throws InvalidArgument on multi-label targets.
double mrr(const LabeledQuerySet& labels, const RoutingModel& model);

/// Upper tail of the regularized incomplete gamma function, Q(a, x).
double regularized_gamma_q(double a, double x);
/// Survival function of the chi-square distribution with `dof` degrees of
/// freedom.
double chi_square_sf(double x, double dof);

struct McNemarResult {
  std::size_t b = 0;  ///< a hit, b miss
  std::size_t c = 0;  ///< a miss, b hit
  double statistic = 0.0;
  double p_value = 1.0;
};

/// Continuity-corrected McNemar test: (|b - c| - 1)^2 / (b + c) against a
/// chi-square with one degree of freedom. b + c = 0 gives statistic 0, p 1.
McNemarResult mcnemar(const std::vector<bool>& hits_a, const std::vector<bool>& hits_b);

struct NamedModel {
  std::string name;
  RoutingModel model;
};

struct SweepRow {
  std::string model;
  std::string algorithm;
  double ell_pct = 0.0;
  std::size_t ell_abs = 0;
  std::size_t k = 0;
  double accuracy = 0.0;
  std::size_t n_queries = 0;
};

struct EvalReport {
  /// Grid order: model, then ell, then k.
  std::vector<SweepRow> rows;
  /// Top-1 hit indicators, hits[model][ell index].
  std::vector<std::vector<std::vector<bool>>> top1_hits;
  std::vector<std::string> model_names;
  std::vector<ProbeBudget> ells;
};

/// Evaluates every (model, ell, k) cell. Each query's partitions are ranked
/// once per model, so ell cells share one ordering and accuracy is
/// non-decreasing in ell.
EvalReport sweep(const QuerySet& queries, const VectorCollection& collection,
                 const Partitioning& partitioning, const std::vector<NamedModel>& models,
                 const std::vector<ProbeBudget>& ells, const std::vector<std::size_t>& ks);

/// Header: model,algorithm,ell_pct,ell_abs,k,accuracy,n_queries
void write_sweep_csv(const EvalReport& report, const std::filesystem::path& path);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

/// Default grids.
std::vector<ProbeBudget> default_ell_grid();
std::vector<std::size_t> default_k_grid();

}  // namespace ivfrank
