#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "ivfrank/common.h"
#include "ivfrank/dataset.h"

namespace ivfrank {

enum class ClusteringAlgorithm { kStandard, kSpherical, kShallow };
enum class AssignmentMetric { kEuclidean, kInnerProduct };

ClusteringAlgorithm parse_algorithm(std::string_view name);
std::string_view to_string(ClusteringAlgorithm algo);
AssignmentMetric parse_metric(std::string_view name);
std::string_view to_string(AssignmentMetric metric);

/// Metric each algorithm assigns with by definition: Euclidean for standard
/// KMeans, inner product for spherical and shallow.
AssignmentMetric default_metric(ClusteringAlgorithm algo);

struct ClusteringParams {
  std::size_t num_partitions = 1;  ///< L
  std::size_t max_iters = 25;
  double rel_tol = 1e-4;
  std::uint64_t seed = 0;
  /// Unset means default_metric(algorithm).
  std::optional<AssignmentMetric> assignment_metric;
};

/// A non-overlapping partitioning of a collection into L partitions, each
/// with a representative row in `representatives`.
struct Partitioning {
  ClusteringAlgorithm algorithm = ClusteringAlgorithm::kStandard;
  AssignmentMetric metric = AssignmentMetric::kEuclidean;
  std::uint64_t seed = 0;
  FloatMatrix representatives;             ///< L x d
  std::vector<idx_t> assignment;           ///< m entries in [0, L)
  std::vector<std::vector<idx_t>> members; ///< per partition, ascending ids

  /// Sum of per-point assignment costs after each assignment step: squared
  /// distance under the Euclidean metric, negated inner product under the
  /// inner-product metric. Not persisted.
  std::vector<double> objective_history;

  std::size_t num_partitions() const { return representatives.rows(); }
  std::size_t dim() const { return representatives.cols(); }
  std::size_t num_points() const { return assignment.size(); }

  /// Rebuilds `members` from `assignment`.
  void rebuild_members();

  /// Throws FormatError unless member lists are consistent with assignment
  /// and every id appears exactly once.
  void validate() const;
};

/// Lloyd iterations with Euclidean assignment, k-means++ seeding and
/// empty-partition repair.
Partitioning kmeans_standard(const VectorCollection& collection, const ClusteringParams& params);

/// Lloyd iterations with centroids L2-normalized after every update and
/// assignment by maximum inner product.
Partitioning kmeans_spherical(const VectorCollection& collection, const ClusteringParams& params);

/// L distinct points sampled uniformly as representatives; one
/// maximum-inner-product assignment pass.
Partitioning kmeans_shallow(const VectorCollection& collection, const ClusteringParams& params);

Partitioning cluster(const VectorCollection& collection, ClusteringAlgorithm algo,
                     const ClusteringParams& params);

/// Index of the best representative under `metric`; lowest index on ties.
idx_t assign_point(std::span<const float> x, const FloatMatrix& representatives,
                   AssignmentMetric metric);
idx_t assign_point(std::span<const float> x, const Partitioning& partitioning);

/// round(sqrt(m)), at least 1.
std::size_t default_num_partitions(std::size_t m);

// On-disk form, sharing a path prefix:
//   <prefix>.rep.fbin   representatives (fbin)
//   <prefix>.assign.u32 m little-endian u32 partition indices
//   <prefix>.header     key=value lines: L, m, d, algorithm, metric, seed
void save_partitioning(const Partitioning& partitioning, const std::filesystem::path& prefix);
Partitioning load_partitioning(const std::filesystem::path& prefix);

}  // namespace ivfrank
