#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "ivfrank/common.h"

namespace ivfrank {

enum class VectorFormat { kFbin, kFvecs };

VectorFormat parse_vector_format(std::string_view name);
std::string_view to_string(VectorFormat format);

/// Immutable collection of m dense d-dimensional vectors. Vector ids are the
/// row indices 0..m-1. Construction validates shape and finiteness.
class VectorCollection {
 public:
  VectorCollection() = default;
  explicit VectorCollection(FloatMatrix data);
  VectorCollection(std::size_t count, std::size_t dim, std::vector<float> data);

  std::size_t count() const { return data_.rows(); }
  std::size_t dim() const { return data_.cols(); }
  std::span<const float> operator[](std::size_t id) const { return data_.row(id); }
  const FloatMatrix& matrix() const { return data_; }

  friend bool operator==(const VectorCollection&, const VectorCollection&) = default;

 private:
  FloatMatrix data_;
};

/// Query vectors. Same layout as VectorCollection; kept as a distinct type so
/// queries and data cannot be swapped by accident.
class QuerySet {
 public:
  QuerySet() = default;
  explicit QuerySet(FloatMatrix data);

  std::size_t count() const { return data_.rows(); }
  std::size_t dim() const { return data_.cols(); }
  std::span<const float> operator[](std::size_t i) const { return data_.row(i); }
  const FloatMatrix& matrix() const { return data_; }

  /// Rows at the given indices, in the given order.
  QuerySet subset(std::span<const idx_t> indices) const;

  friend bool operator==(const QuerySet&, const QuerySet&) = default;

 private:
  FloatMatrix data_;
};

/// Throws InvalidArgument when dims differ.
void check_same_dim(const QuerySet& queries, const VectorCollection& collection);

// Vector files. fbin: u32 count, u32 dim, then count*dim f32 (all LE).
// fvecs: per vector an i32 dim prefix followed by dim f32 values.

FloatMatrix read_matrix(const std::filesystem::path& path, VectorFormat format);
void write_matrix(const FloatMatrix& matrix, const std::filesystem::path& path,
                  VectorFormat format, bool create_parents = false);

VectorCollection load_vectors(const std::filesystem::path& path, VectorFormat format);
void save_vectors(const VectorCollection& collection, const std::filesystem::path& path,
                  VectorFormat format, bool create_parents = false);

QuerySet load_queries(const std::filesystem::path& path, VectorFormat format);
void save_queries(const QuerySet& queries, const std::filesystem::path& path,
                  VectorFormat format, bool create_parents = false);

/// Isotropic Gaussian mixture with centers drawn uniformly on the unit sphere.
class GaussianMixture {
 public:
  GaussianMixture(std::size_t dim, std::size_t n_centers, std::uint64_t seed);

  const FloatMatrix& centers() const { return centers_; }
  std::size_t dim() const { return centers_.cols(); }

  struct Sample {
    FloatMatrix points;
    std::vector<idx_t> component;  ///< generating center per row
  };

  /// Draws count points: uniform component, then center + N(0, spread^2 I).
  Sample sample(std::size_t count, double spread, std::uint64_t seed) const;

 private:
  FloatMatrix centers_;
};

/// Mixture-of-Gaussians collection; a pure function of its arguments.
VectorCollection synth_clustered(std::size_t m, std::size_t d, std::size_t n_centers,
                                 double spread, std::uint64_t seed);

/// Queries drawn from the same mixture synth_clustered(.., seed) uses, with an
/// independent sampling stream selected by query_seed.
QuerySet synth_queries(std::size_t n_q, std::size_t d, std::size_t n_centers, double spread,
                       std::uint64_t seed, std::uint64_t query_seed);

struct SplitSpec {
  double train_frac = 0.6;
  double val_frac = 0.2;
  double test_frac = 0.2;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<idx_t> train;
  std::vector<idx_t> val;
  std::vector<idx_t> test;
};

struct QuerySplit {
  SplitIndices indices;
  QuerySet train;
  QuerySet val;
  QuerySet test;
};

/// Index-level split: seeded permutation, floor-rounded val/test sizes with
/// the remainder going to train. Requires n_q >= 5 and non-empty splits.
SplitIndices split_indices(std::size_t n_q, const SplitSpec& spec);
QuerySplit split_queries(const QuerySet& queries, const SplitSpec& spec);

}  // namespace ivfrank
