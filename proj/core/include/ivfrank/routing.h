#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ivfrank/clustering.h"
#include "ivfrank/common.h"
#include "ivfrank/dataset.h"
#include "ivfrank/oracle.h"

namespace ivfrank {

enum class Provenance { kBaseline, kLearnt };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view name);

/// Linear routing function: partition scores are W q with W of shape L x d.
/// Baseline and learnt models differ only in W.
struct RoutingModel {
  FloatMatrix weights;
  Provenance provenance = Provenance::kBaseline;
  std::string run_id;

  std::size_t num_partitions() const { return weights.rows(); }
  std::size_t dim() const { return weights.cols(); }
};

/// Number of partitions to probe, either absolute or a percentage of L.
class ProbeBudget {
 public:
  static ProbeBudget absolute(std::size_t ell);
  static ProbeBudget percent(double pct);
  /// Accepts "N" (absolute) or "N%" (percent of L).
  static ProbeBudget parse(std::string_view text);

  bool is_percent() const { return is_percent_; }
  double value() const { return value_; }

  /// Concrete ell for L partitions. Percentages round up (ceil(pct * L / 100))
  /// and are clamped to [1, L]. Absolute values must lie in [1, L].
  std::size_t resolve(std::size_t num_partitions) const;

  std::string to_string() const;

 private:
  ProbeBudget(bool is_percent, double value) : is_percent_(is_percent), value_(value) {}
  bool is_percent_;
  double value_;
};

/// W q, computed row by row with the library dot kernel.
std::vector<float> score_partitions(std::span<const float> q, const RoutingModel& model);

/// Orders partition indices by descending score, lowest index first on ties,
/// and keeps the first ell.
std::vector<idx_t> top_partitions(std::span<const float> scores, std::size_t ell);

std::vector<idx_t> route(std::span<const float> q, const RoutingModel& model, std::size_t ell);
std::vector<idx_t> route(std::span<const float> q, const RoutingModel& model,
                         const ProbeBudget& budget);

/// Exact top-k over the members of the ell routed partitions.
TopKResult search(std::span<const float> q, const RoutingModel& model,
                  const Partitioning& partitioning, const VectorCollection& collection,
                  const ProbeBudget& budget, std::size_t k);

/// W = partition representatives.
RoutingModel baseline_model(const Partitioning& partitioning);

// Checkpoint: <prefix>.fbin holds W; <prefix>.header holds key=value lines
// L, d, provenance, run_id.
void save_model(const RoutingModel& model, const std::filesystem::path& prefix);
RoutingModel load_model(const std::filesystem::path& prefix);

}  // namespace ivfrank
