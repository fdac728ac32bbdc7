#include "ivfrank/clustering.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "ivfrank/kvfile.h"
#include "rng.h"

// Threading contract: assignment steps run in parallel across points, each
// writing only its own slot. Centroid accumulation is a serial left-to-right
// reduction in double, so results are bit-identical for any thread count.

namespace ivfrank {

namespace {

struct Assignment {
  std::vector<idx_t> label;
  std::vector<double> cost;  // lower is better
};

double point_cost(std::span<const float> x, std::span<const float> rep, AssignmentMetric metric) {
  return metric == AssignmentMetric::kEuclidean ? squared_l2_f64(x, rep)
                                                : -static_cast<double>(dot(x, rep));
}

void assign_all(const VectorCollection& data, const FloatMatrix& reps, AssignmentMetric metric,
                Assignment& out) {
  out.label.resize(data.count());
  out.cost.resize(data.count());
  parallel_for(data.count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const idx_t best = assign_point(data[i], reps, metric);
      out.label[i] = best;
      out.cost[i] = point_cost(data[i], reps.row(best), metric);
    }
  });
}

double total_cost(const Assignment& a) {
  double sum = 0.0;
  for (double c : a.cost) sum += c;
  return sum;
}

void check_params(const VectorCollection& data, const ClusteringParams& params) {
  if (params.num_partitions == 0) throw InvalidArgument("number of partitions must be >= 1");
  if (params.num_partitions > data.count()) {
    throw InvalidArgument("number of partitions " + std::to_string(params.num_partitions) +
                          " exceeds collection size " + std::to_string(data.count()));
  }
  if (params.max_iters == 0) throw InvalidArgument("max_iters must be >= 1");
  if (!(params.rel_tol >= 0.0)) throw InvalidArgument("rel_tol must be >= 0");
}

// Writes x into rep, L2-normalized when `normalize` is set. Returns false if
// normalization is impossible (zero vector).
bool set_representative(std::span<float> rep, std::span<const float> x, bool normalize) {
  if (!normalize) {
    std::ranges::copy(x, rep.begin());
    return true;
  }
  const double norm = std::sqrt(squared_norm_f64(x));
  if (norm == 0.0) return false;
  for (std::size_t j = 0; j < x.size(); ++j) rep[j] = static_cast<float>(x[j] / norm);
  return true;
}

FloatMatrix kmeanspp_init(const VectorCollection& data, std::size_t num_partitions,
                          std::uint64_t seed) {
  const std::size_t m = data.count();
  FloatMatrix centers(num_partitions, data.dim());
  std::mt19937_64 rng(detail::mix_seed(seed, 3));
  std::vector<char> chosen(m, 0);

  std::size_t first = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
  std::ranges::copy(data[first], centers.row(0).begin());
  chosen[first] = 1;

  std::vector<double> d2(m);
  parallel_for(m, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) d2[i] = squared_l2_f64(data[i], centers.row(0));
  });

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t c = 1; c < num_partitions; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) total += d2[i];
    std::size_t pick = m;
    if (total > 0.0) {
      const double target = unit(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        acc += d2[i];
        if (d2[i] > 0.0 && acc >= target) {
          pick = i;
          break;
        }
      }
      if (pick == m) {
        // rounding pushed target past the last positive weight
        for (std::size_t i = m; i-- > 0;) {
          if (d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      // every point coincides with a center; fall back to an unchosen id
      std::vector<std::size_t> remaining;
      for (std::size_t i = 0; i < m; ++i) {
        if (!chosen[i]) remaining.push_back(i);
      }
      pick = remaining[std::uniform_int_distribution<std::size_t>(0, remaining.size() - 1)(rng)];
    }
    chosen[pick] = 1;
    std::ranges::copy(data[pick], centers.row(c).begin());
    parallel_for(m, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        d2[i] = std::min(d2[i], squared_l2_f64(data[i], centers.row(c)));
      }
    });
  }
  return centers;
}

// Moves one point into each empty partition. The donor is the largest
// partition (lowest index on ties) and the moved point is the donor member
// with the highest cost against the donor's representative. The emptied
// partition's representative becomes that point. Returns true if any repair
// happened.
bool repair_empty(const VectorCollection& data, FloatMatrix& reps, AssignmentMetric metric,
                  bool normalize, Assignment& a) {
  const std::size_t num_partitions = reps.rows();
  std::vector<std::size_t> sizes(num_partitions, 0);
  for (idx_t l : a.label) ++sizes[l];
  bool repaired = false;
  for (std::size_t empty = 0; empty < num_partitions; ++empty) {
    if (sizes[empty] != 0) continue;
    const auto donor = static_cast<idx_t>(
        std::distance(sizes.begin(), std::max_element(sizes.begin(), sizes.end())));
    if (sizes[donor] < 2) break;  // cannot happen while L <= m
    std::size_t moved = data.count();
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.count(); ++i) {
      if (a.label[i] != donor) continue;
      if (a.cost[i] > worst) {
        worst = a.cost[i];
        moved = i;
      }
    }
    if (!set_representative(reps.row(empty), data[moved], normalize)) {
      // zero vector: pick the next member that can be normalized
      for (std::size_t i = 0; i < data.count(); ++i) {
        if (a.label[i] == donor && set_representative(reps.row(empty), data[i], normalize)) {
          moved = i;
          break;
        }
      }
    }
    a.label[moved] = static_cast<idx_t>(empty);
    a.cost[moved] = point_cost(data[moved], reps.row(empty), metric);
    --sizes[donor];
    ++sizes[empty];
    repaired = true;
  }
  return repaired;
}

// Member means (double accumulation, serial), L2-normalized for spherical.
// A partition whose normalized mean is undefined (zero norm) is reseeded from
// the highest-cost member of the largest partition, measured against that
// partition's new mean. Returns the number of reseeded partitions.
std::size_t update_centroids(const VectorCollection& data, const Assignment& a,
                             FloatMatrix& reps, AssignmentMetric metric, bool normalize) {
  const std::size_t num_partitions = reps.rows();
  const std::size_t d = data.dim();
  std::vector<double> sums(num_partitions * d, 0.0);
  std::vector<std::size_t> counts(num_partitions, 0);
  for (std::size_t i = 0; i < data.count(); ++i) {
    const idx_t l = a.label[i];
    ++counts[l];
    double* s = sums.data() + static_cast<std::size_t>(l) * d;
    auto x = data[i];
    for (std::size_t j = 0; j < d; ++j) s[j] += x[j];
  }
  std::vector<idx_t> degenerate;
  for (std::size_t l = 0; l < num_partitions; ++l) {
    const double* s = sums.data() + l * d;
    if (counts[l] == 0) {
      degenerate.push_back(static_cast<idx_t>(l));
      continue;
    }
    const double inv = 1.0 / static_cast<double>(counts[l]);
    double scale = inv;
    if (normalize) {
      double norm2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) norm2 += (s[j] * inv) * (s[j] * inv);
      if (norm2 == 0.0) {
        degenerate.push_back(static_cast<idx_t>(l));
        continue;
      }
      scale = inv / std::sqrt(norm2);
    }
    auto rep = reps.row(l);
    for (std::size_t j = 0; j < d; ++j) rep[j] = static_cast<float>(s[j] * scale);
  }

  for (idx_t l : degenerate) {
    const auto donor = static_cast<idx_t>(
        std::distance(counts.begin(), std::max_element(counts.begin(), counts.end())));
    double worst = -std::numeric_limits<double>::infinity();
    std::size_t pick = data.count();
    for (std::size_t i = 0; i < data.count(); ++i) {
      if (a.label[i] != donor) continue;
      const double c = point_cost(data[i], reps.row(donor), metric);
      if (c > worst && squared_norm_f64(data[i]) > 0.0) {
        worst = c;
        pick = i;
      }
    }
    if (pick < data.count()) set_representative(reps.row(l), data[pick], normalize);
  }
  return degenerate.size();
}

Partitioning lloyd(const VectorCollection& data, const ClusteringParams& params,
                   ClusteringAlgorithm algo, bool normalize) {
  check_params(data, params);
  const AssignmentMetric metric = params.assignment_metric.value_or(default_metric(algo));

  Partitioning p;
  p.algorithm = algo;
  p.metric = metric;
  p.seed = params.seed;
  p.representatives = kmeanspp_init(data, params.num_partitions, params.seed);
  if (normalize) {
    for (std::size_t l = 0; l < p.num_partitions(); ++l) {
      auto rep = p.representatives.row(l);
      const std::vector<float> copy(rep.begin(), rep.end());
      if (!set_representative(rep, copy, true)) {
        // zero initial center: it will be reseeded after the first assignment
        std::ranges::fill(rep, 0.0f);
      }
    }
  }

  Assignment a;
  assign_all(data, p.representatives, metric, a);
  repair_empty(data, p.representatives, metric, normalize, a);
  double objective = total_cost(a);
  p.objective_history.push_back(objective);

  for (std::size_t iter = 1; iter < params.max_iters; ++iter) {
    const std::size_t reseeded =
        update_centroids(data, a, p.representatives, metric, normalize);
    const std::vector<idx_t> previous = a.label;
    assign_all(data, p.representatives, metric, a);
    const bool repaired = repair_empty(data, p.representatives, metric, normalize, a) || reseeded > 0;

    const double next = total_cost(a);
    p.objective_history.push_back(next);
    const double improvement = (objective - next) / std::max(std::abs(objective), 1e-300);
    objective = next;
    if (repaired) continue;
    if (a.label == previous || improvement < params.rel_tol) break;
  }

  p.assignment = std::move(a.label);
  p.rebuild_members();
  return p;
}

std::vector<idx_t> sample_distinct(std::size_t m, std::size_t count, std::uint64_t seed) {
  std::vector<idx_t> ids(m);
  std::iota(ids.begin(), ids.end(), idx_t{0});
  std::mt19937_64 rng(detail::mix_seed(seed, 4));
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, m - 1)(rng);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(count);
  return ids;
}

}  // namespace

ClusteringAlgorithm parse_algorithm(std::string_view name) {
  if (name == "standard") return ClusteringAlgorithm::kStandard;
  if (name == "spherical") return ClusteringAlgorithm::kSpherical;
  if (name == "shallow") return ClusteringAlgorithm::kShallow;
  throw InvalidArgument("unknown clustering algorithm: " + std::string(name));
}

std::string_view to_string(ClusteringAlgorithm algo) {
  switch (algo) {
    case ClusteringAlgorithm::kStandard: return "standard";
    case ClusteringAlgorithm::kSpherical: return "spherical";
    case ClusteringAlgorithm::kShallow: return "shallow";
  }
  return "?";
}

AssignmentMetric parse_metric(std::string_view name) {
  if (name == "euclidean") return AssignmentMetric::kEuclidean;
  if (name == "inner_product") return AssignmentMetric::kInnerProduct;
  throw InvalidArgument("unknown assignment metric: " + std::string(name));
}

std::string_view to_string(AssignmentMetric metric) {
  return metric == AssignmentMetric::kEuclidean ? "euclidean" : "inner_product";
}

AssignmentMetric default_metric(ClusteringAlgorithm algo) {
  return algo == ClusteringAlgorithm::kStandard ? AssignmentMetric::kEuclidean
                                                : AssignmentMetric::kInnerProduct;
}

void Partitioning::rebuild_members() {
  members.assign(num_partitions(), {});
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    members.at(assignment[i]).push_back(static_cast<idx_t>(i));
  }
}

void Partitioning::validate() const {
  if (members.size() != num_partitions()) throw FormatError("member list count != L");
  std::vector<char> seen(assignment.size(), 0);
  for (std::size_t l = 0; l < members.size(); ++l) {
    for (std::size_t j = 0; j < members[l].size(); ++j) {
      const idx_t id = members[l][j];
      if (id >= assignment.size()) throw FormatError("member id out of range");
      if (seen[id]) throw FormatError("id " + std::to_string(id) + " in two partitions");
      if (assignment[id] != l) throw FormatError("member list disagrees with assignment");
      if (j > 0 && members[l][j - 1] >= id) throw FormatError("member list not ascending");
      seen[id] = 1;
    }
  }
  if (std::ranges::find(seen, 0) != seen.end()) throw FormatError("id missing from partitions");
}

Partitioning kmeans_standard(const VectorCollection& collection, const ClusteringParams& params) {
  return lloyd(collection, params, ClusteringAlgorithm::kStandard, false);
}

Partitioning kmeans_spherical(const VectorCollection& collection,
                              const ClusteringParams& params) {
  return lloyd(collection, params, ClusteringAlgorithm::kSpherical, true);
}

Partitioning kmeans_shallow(const VectorCollection& collection, const ClusteringParams& params) {
  check_params(collection, params);
  Partitioning p;
  p.algorithm = ClusteringAlgorithm::kShallow;
  p.metric = params.assignment_metric.value_or(AssignmentMetric::kInnerProduct);
  p.seed = params.seed;
  const auto picks = sample_distinct(collection.count(), params.num_partitions, params.seed);
  p.representatives = FloatMatrix(picks.size(), collection.dim());
  for (std::size_t l = 0; l < picks.size(); ++l) {
    std::ranges::copy(collection[picks[l]], p.representatives.row(l).begin());
  }
  Assignment a;
  assign_all(collection, p.representatives, p.metric, a);
  p.objective_history.push_back(total_cost(a));
  p.assignment = std::move(a.label);
  p.rebuild_members();
  return p;
}

Partitioning cluster(const VectorCollection& collection, ClusteringAlgorithm algo,
                     const ClusteringParams& params) {
  switch (algo) {
    case ClusteringAlgorithm::kStandard: return kmeans_standard(collection, params);
    case ClusteringAlgorithm::kSpherical: return kmeans_spherical(collection, params);
    case ClusteringAlgorithm::kShallow: return kmeans_shallow(collection, params);
  }
  throw InvalidArgument("unknown clustering algorithm");
}

idx_t assign_point(std::span<const float> x, const FloatMatrix& representatives,
                   AssignmentMetric metric) {
  if (x.size() != representatives.cols()) {
    throw InvalidArgument("assign_point: dim " + std::to_string(x.size()) + " != " +
                          std::to_string(representatives.cols()));
  }
  idx_t best = 0;
  if (metric == AssignmentMetric::kEuclidean) {
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < representatives.rows(); ++l) {
      const double d = squared_l2_f64(x, representatives.row(l));
      if (d < best_d) {
        best_d = d;
        best = static_cast<idx_t>(l);
      }
    }
  } else {
    float best_s = -std::numeric_limits<float>::infinity();
    for (std::size_t l = 0; l < representatives.rows(); ++l) {
      const float s = dot(x, representatives.row(l));
      if (s > best_s) {
        best_s = s;
        best = static_cast<idx_t>(l);
      }
    }
  }
  return best;
}

idx_t assign_point(std::span<const float> x, const Partitioning& partitioning) {
  return assign_point(x, partitioning.representatives, partitioning.metric);
}

std::size_t default_num_partitions(std::size_t m) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(std::sqrt(double(m)))));
}

void save_partitioning(const Partitioning& partitioning, const std::filesystem::path& prefix) {
  const std::filesystem::path base = prefix;
  write_matrix(partitioning.representatives, base.string() + ".rep.fbin", VectorFormat::kFbin,
               true);
  {
    const std::string path = base.string() + ".assign.u32";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(partitioning.assignment.data()),
              static_cast<std::streamsize>(partitioning.assignment.size() * sizeof(idx_t)));
    if (!out) throw IoError("write failed: " + path);
  }
  KeyValueFile header;
  header.set("L", std::uint64_t{partitioning.num_partitions()});
  header.set("m", std::uint64_t{partitioning.num_points()});
  header.set("d", std::uint64_t{partitioning.dim()});
  header.set("algorithm", std::string(to_string(partitioning.algorithm)));
  header.set("metric", std::string(to_string(partitioning.metric)));
  header.set("seed", std::uint64_t{partitioning.seed});
  header.save(base.string() + ".header");
}

Partitioning load_partitioning(const std::filesystem::path& prefix) {
  const std::filesystem::path base = prefix;
  const auto header = KeyValueFile::load(base.string() + ".header");
  Partitioning p;
  p.algorithm = parse_algorithm(header.get("algorithm"));
  p.metric = parse_metric(header.get("metric"));
  p.seed = header.get_u64("seed");
  p.representatives = read_matrix(base.string() + ".rep.fbin", VectorFormat::kFbin);
  const auto num_partitions = header.get_u64("L");
  const auto m = header.get_u64("m");
  if (p.representatives.rows() != num_partitions || p.representatives.cols() != header.get_u64("d")) {
    throw FormatError("partition header shape disagrees with representatives file");
  }
  const std::string path = base.string() + ".assign.u32";
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path);
  const auto bytes = static_cast<std::uint64_t>(in.tellg());
  if (bytes != m * sizeof(idx_t)) {
    throw FormatError(path + ": expected " + std::to_string(m) + " u32 entries");
  }
  in.seekg(0);
  p.assignment.resize(m);
  in.read(reinterpret_cast<char*>(p.assignment.data()), static_cast<std::streamsize>(bytes));
  for (idx_t l : p.assignment) {
    if (l >= num_partitions) throw FormatError(path + ": partition index out of range");
  }
  p.rebuild_members();
  return p;
}

}  // namespace ivfrank
