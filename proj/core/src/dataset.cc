#include "ivfrank/dataset.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include "rng.h"

namespace ivfrank {

static_assert(std::endian::native == std::endian::little,
              "vector file I/O assumes a little-endian host");

namespace {

void validate_matrix(const FloatMatrix& m, const char* what) {
  if (m.rows() == 0) throw InvalidArgument(std::string(what) + ": zero count");
  if (m.cols() == 0) throw InvalidArgument(std::string(what) + ": zero dim");
  if (!m.all_finite()) throw InvalidArgument(std::string(what) + ": non-finite value");
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  std::vector<char> bytes(size);
  in.seekg(0);
  if (size > 0 && !in.read(bytes.data(), static_cast<std::streamsize>(size))) {
    throw IoError("read failed: " + path.string());
  }
  return bytes;
}

FloatMatrix parse_fbin(const std::vector<char>& bytes, const std::string& name) {
  if (bytes.size() < 8) throw FormatError(name + ": truncated fbin header");
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  std::memcpy(&count, bytes.data(), 4);
  std::memcpy(&dim, bytes.data() + 4, 4);
  if (count == 0 || dim == 0) throw FormatError(name + ": zero count or dim");
  const std::size_t n = static_cast<std::size_t>(count) * dim;
  const std::size_t expected = 8 + n * sizeof(float);
  if (bytes.size() < expected) {
    throw FormatError(name + ": truncated fbin payload (expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()) + ")");
  }
  if (bytes.size() > expected) throw FormatError(name + ": trailing bytes after fbin payload");
  std::vector<float> data(n);
  std::memcpy(data.data(), bytes.data() + 8, n * sizeof(float));
  return FloatMatrix(count, dim, std::move(data));
}

FloatMatrix parse_fvecs(const std::vector<char>& bytes, const std::string& name) {
  std::size_t offset = 0;
  std::int32_t dim = -1;
  std::vector<float> data;
  std::size_t count = 0;
  while (offset < bytes.size()) {
    if (bytes.size() - offset < 4) throw FormatError(name + ": truncated fvecs prefix");
    std::int32_t d = 0;
    std::memcpy(&d, bytes.data() + offset, 4);
    offset += 4;
    if (d <= 0) throw FormatError(name + ": non-positive fvecs dim");
    if (dim < 0) {
      dim = d;
    } else if (d != dim) {
      throw FormatError(name + ": fvecs dim mismatch at record " + std::to_string(count) +
                        " (" + std::to_string(d) + " vs " + std::to_string(dim) + ")");
    }
    const std::size_t payload = static_cast<std::size_t>(d) * sizeof(float);
    if (bytes.size() - offset < payload) throw FormatError(name + ": truncated fvecs record");
    const std::size_t at = data.size();
    data.resize(at + static_cast<std::size_t>(d));
    std::memcpy(data.data() + at, bytes.data() + offset, payload);
    offset += payload;
    ++count;
  }
  if (count == 0) throw FormatError(name + ": empty fvecs file");
  return FloatMatrix(count, static_cast<std::size_t>(dim), std::move(data));
}

}  // namespace

VectorFormat parse_vector_format(std::string_view name) {
  if (name == "fbin") return VectorFormat::kFbin;
  if (name == "fvecs") return VectorFormat::kFvecs;
  throw InvalidArgument("unknown vector format: " + std::string(name));
}

std::string_view to_string(VectorFormat format) {
  return format == VectorFormat::kFbin ? "fbin" : "fvecs";
}

VectorCollection::VectorCollection(FloatMatrix data) : data_(std::move(data)) {
  validate_matrix(data_, "VectorCollection");
}

VectorCollection::VectorCollection(std::size_t count, std::size_t dim, std::vector<float> data)
    : VectorCollection(FloatMatrix(count, dim, std::move(data))) {}

QuerySet::QuerySet(FloatMatrix data) : data_(std::move(data)) {
  validate_matrix(data_, "QuerySet");
}

QuerySet QuerySet::subset(std::span<const idx_t> indices) const {
  FloatMatrix out(indices.size(), dim());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= count()) throw InvalidArgument("QuerySet::subset: index out of range");
    std::ranges::copy(data_.row(indices[i]), out.row(i).begin());
  }
  QuerySet result;
  result.data_ = std::move(out);
  return result;
}

void check_same_dim(const QuerySet& queries, const VectorCollection& collection) {
  if (queries.dim() != collection.dim()) {
    throw InvalidArgument("query dim " + std::to_string(queries.dim()) +
                          " != collection dim " + std::to_string(collection.dim()));
  }
}

FloatMatrix read_matrix(const std::filesystem::path& path, VectorFormat format) {
  const auto bytes = read_file(path);
  return format == VectorFormat::kFbin ? parse_fbin(bytes, path.string())
                                       : parse_fvecs(bytes, path.string());
}

void write_matrix(const FloatMatrix& matrix, const std::filesystem::path& path,
                  VectorFormat format, bool create_parents) {
  const auto parent = path.parent_path();
  if (!parent.empty() && !std::filesystem::exists(parent)) {
    if (!create_parents) throw IoError("directory does not exist: " + parent.string());
    std::filesystem::create_directories(parent);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  if (format == VectorFormat::kFbin) {
    const auto count = static_cast<std::uint32_t>(matrix.rows());
    const auto dim = static_cast<std::uint32_t>(matrix.cols());
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(&dim), 4);
    out.write(reinterpret_cast<const char*>(matrix.data().data()),
              static_cast<std::streamsize>(matrix.size() * sizeof(float)));
  } else {
    const auto dim = static_cast<std::int32_t>(matrix.cols());
    for (std::size_t r = 0; r < matrix.rows(); ++r) {
      out.write(reinterpret_cast<const char*>(&dim), 4);
      out.write(reinterpret_cast<const char*>(matrix.row(r).data()),
                static_cast<std::streamsize>(matrix.cols() * sizeof(float)));
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

VectorCollection load_vectors(const std::filesystem::path& path, VectorFormat format) {
  return VectorCollection(read_matrix(path, format));
}

void save_vectors(const VectorCollection& collection, const std::filesystem::path& path,
                  VectorFormat format, bool create_parents) {
  write_matrix(collection.matrix(), path, format, create_parents);
}

QuerySet load_queries(const std::filesystem::path& path, VectorFormat format) {
  return QuerySet(read_matrix(path, format));
}

void save_queries(const QuerySet& queries, const std::filesystem::path& path,
                  VectorFormat format, bool create_parents) {
  write_matrix(queries.matrix(), path, format, create_parents);
}

GaussianMixture::GaussianMixture(std::size_t dim, std::size_t n_centers, std::uint64_t seed)
    : centers_(n_centers, dim) {
  if (dim == 0 || n_centers == 0) throw InvalidArgument("GaussianMixture: empty shape");
  std::mt19937_64 rng(detail::mix_seed(seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (std::size_t c = 0; c < n_centers; ++c) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (auto& x : v) {
        x = normal(rng);
        norm2 += x * x;
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    auto row = centers_.row(c);
    for (std::size_t j = 0; j < dim; ++j) row[j] = static_cast<float>(v[j] * inv);
  }
}

GaussianMixture::Sample GaussianMixture::sample(std::size_t count, double spread,
                                                std::uint64_t seed) const {
  if (!(spread >= 0.0) || !std::isfinite(spread)) {
    throw InvalidArgument("GaussianMixture::sample: spread must be finite and >= 0");
  }
  Sample s{FloatMatrix(count, dim()), std::vector<idx_t>(count)};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, centers_.rows() - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = pick(rng);
    s.component[i] = static_cast<idx_t>(c);
    auto center = centers_.row(c);
    auto out = s.points.row(i);
    for (std::size_t j = 0; j < dim(); ++j) {
      const double noise = spread > 0.0 ? spread * normal(rng) : 0.0;
      out[j] = static_cast<float>(center[j] + noise);
    }
  }
  return s;
}

VectorCollection synth_clustered(std::size_t m, std::size_t d, std::size_t n_centers,
                                 double spread, std::uint64_t seed) {
  if (d == 0 || n_centers == 0 || m < n_centers) {
    throw InvalidArgument("synth_clustered: require m >= n_centers >= 1 and d >= 1");
  }
  GaussianMixture mixture(d, n_centers, seed);
  return VectorCollection(mixture.sample(m, spread, detail::mix_seed(seed, 1)).points);
}

QuerySet synth_queries(std::size_t n_q, std::size_t d, std::size_t n_centers, double spread,
                       std::uint64_t seed, std::uint64_t query_seed) {
  if (d == 0 || n_centers == 0 || n_q == 0) {
    throw InvalidArgument("synth_queries: require n_q, n_centers, d >= 1");
  }
  GaussianMixture mixture(d, n_centers, seed);
  return QuerySet(
      mixture.sample(n_q, spread, detail::mix_seed(query_seed, 0x5157ULL)).points);
}

SplitIndices split_indices(std::size_t n_q, const SplitSpec& spec) {
  const double fracs[] = {spec.train_frac, spec.val_frac, spec.test_frac};
  for (double f : fracs) {
    if (!(f >= 0.0 && f <= 1.0)) throw InvalidArgument("split fractions must lie in [0, 1]");
  }
  if (std::abs(spec.train_frac + spec.val_frac + spec.test_frac - 1.0) > 1e-9) {
    throw InvalidArgument("split fractions must sum to 1");
  }
  if (n_q < 5) throw InvalidArgument("split_queries requires at least 5 queries");

  const auto floor_size = [n_q](double frac) {
    return static_cast<std::size_t>(std::floor(frac * static_cast<double>(n_q) + 1e-9));
  };
  const std::size_t n_val = floor_size(spec.val_frac);
  const std::size_t n_test = floor_size(spec.test_frac);
  if (n_val + n_test >= n_q || n_val == 0 || n_test == 0) {
    throw InvalidArgument("split fractions leave an empty split");
  }
  const std::size_t n_train = n_q - n_val - n_test;

  std::vector<idx_t> perm(n_q);
  std::iota(perm.begin(), perm.end(), idx_t{0});
  std::mt19937_64 rng(detail::mix_seed(spec.seed, 2));
  std::shuffle(perm.begin(), perm.end(), rng);

  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
  return out;
}

QuerySplit split_queries(const QuerySet& queries, const SplitSpec& spec) {
  QuerySplit split;
  split.indices = split_indices(queries.count(), spec);
  split.train = queries.subset(split.indices.train);
  split.val = queries.subset(split.indices.val);
  split.test = queries.subset(split.indices.test);
  return split;
}

}  // namespace ivfrank
