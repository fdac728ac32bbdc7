#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ivfrank/clustering.h"
#include "ivfrank/common.h"
#include "ivfrank/dataset.h"

namespace ivfrank {

/// Exact top-k by inner product. Scores are non-increasing; equal scores are
/// ordered by ascending id.
struct TopKResult {
  std::vector<idx_t> ids;
  std::vector<float> scores;
};

/// Exact MIPS over `candidates` (all ids when absent). Candidate order does
/// not matter. Returns fewer than k entries only when there are fewer than k
/// candidates.
TopKResult exact_topk(std::span<const float> q, const VectorCollection& collection, std::size_t k,
                      std::optional<std::span<const idx_t>> candidates = std::nullopt);

/// Exact top-k ids for every query, ordered by query index.
std::vector<TopKResult> exact_topk_batch(const QuerySet& queries,
                                         const VectorCollection& collection, std::size_t k);

/// Queries paired with oracle routing targets: for each query, the sorted set
/// of partitions holding at least one of its exact top-k neighbours.
struct LabeledQuerySet {
  QuerySet queries;
  std::vector<std::vector<idx_t>> targets;
  std::size_t num_partitions = 0;  ///< L
  std::size_t k = 1;

  std::size_t size() const { return targets.size(); }

  /// Throws FormatError if a target is empty, out of range, unsorted, or
  /// (for k = 1) not a single index.
  void validate() const;
};

/// Maps exact top-k neighbours to their partitions.
std::vector<idx_t> label_from_neighbors(std::span<const idx_t> neighbor_ids,
                                        const Partitioning& partitioning);

LabeledQuerySet build_labels(const QuerySet& queries, const VectorCollection& collection,
                             const Partitioning& partitioning, std::size_t k);

// Label file: u32 n_q, u32 L, u32 k, then per query a u32 count followed by
// that many u32 partition indices (all little-endian). Queries are stored
// separately.
void save_labels(const LabeledQuerySet& labels, const std::filesystem::path& path);
/// Reads targets from `path` and attaches `queries`; n_q must match.
LabeledQuerySet load_labels(const std::filesystem::path& path, QuerySet queries);

}  // namespace ivfrank
