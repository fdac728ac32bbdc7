#include "ivfrank/oracle.h"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace ivfrank {

namespace {

struct Scored {
  float score;
  idx_t id;
};

// Strict "ranks ahead of": higher score first, then lower id.
bool ahead(const Scored& a, const Scored& b) {
  return a.score > b.score || (a.score == b.score && a.id < b.id);
}

// Bounded selection: keeps a min-heap of the k best seen so far; the heap
// top is the entry that would be evicted first.
class TopKCollector {
 public:
  explicit TopKCollector(std::size_t k) : k_(k) { heap_.reserve(k); }

  void push(float score, idx_t id) {
    const Scored s{score, id};
    if (heap_.size() < k_) {
      heap_.push_back(s);
      std::push_heap(heap_.begin(), heap_.end(), ahead);
    } else if (ahead(s, heap_.front())) {
      std::pop_heap(heap_.begin(), heap_.end(), ahead);
      heap_.back() = s;
      std::push_heap(heap_.begin(), heap_.end(), ahead);
    }
  }

  TopKResult finish() {
    std::sort_heap(heap_.begin(), heap_.end(), ahead);
    TopKResult r;
    r.ids.reserve(heap_.size());
    r.scores.reserve(heap_.size());
    for (const auto& s : heap_) {
      r.ids.push_back(s.id);
      r.scores.push_back(s.score);
    }
    return r;
  }

 private:
  std::size_t k_;
  std::vector<Scored> heap_;
};

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

}  // namespace

TopKResult exact_topk(std::span<const float> q, const VectorCollection& collection, std::size_t k,
                      std::optional<std::span<const idx_t>> candidates) {
  if (k == 0) throw InvalidArgument("exact_topk: k must be >= 1");
  if (q.size() != collection.dim()) {
    throw InvalidArgument("exact_topk: query dim " + std::to_string(q.size()) +
                          " != collection dim " + std::to_string(collection.dim()));
  }
  TopKCollector top(std::min(k, candidates ? candidates->size() : collection.count()));
  if (candidates) {
    for (idx_t id : *candidates) {
      if (id >= collection.count()) throw InvalidArgument("exact_topk: candidate id out of range");
      top.push(dot(q, collection[id]), id);
    }
  } else {
    for (std::size_t id = 0; id < collection.count(); ++id) {
      top.push(dot(q, collection[id]), static_cast<idx_t>(id));
    }
  }
  return top.finish();
}

std::vector<TopKResult> exact_topk_batch(const QuerySet& queries,
                                         const VectorCollection& collection, std::size_t k) {
  check_same_dim(queries, collection);
  std::vector<TopKResult> out(queries.count());
  parallel_for(queries.count(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = exact_topk(queries[i], collection, k);
  });
  return out;
}

void LabeledQuerySet::validate() const {
  if (targets.size() != queries.count()) throw FormatError("labels: target count != query count");
  for (const auto& t : targets) {
    if (t.empty()) throw FormatError("labels: empty target");
    if (k == 1 && t.size() != 1) throw FormatError("labels: k=1 target must be a single index");
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (t[j] >= num_partitions) throw FormatError("labels: partition index out of range");
      if (j > 0 && t[j - 1] >= t[j]) throw FormatError("labels: target not strictly ascending");
    }
  }
}

std::vector<idx_t> label_from_neighbors(std::span<const idx_t> neighbor_ids,
                                        const Partitioning& partitioning) {
  std::vector<idx_t> parts;
  parts.reserve(neighbor_ids.size());
  for (idx_t id : neighbor_ids) parts.push_back(partitioning.assignment.at(id));
  std::ranges::sort(parts);
  parts.erase(std::unique(parts.begin(), parts.end()), parts.end());
  return parts;
}

LabeledQuerySet build_labels(const QuerySet& queries, const VectorCollection& collection,
                             const Partitioning& partitioning, std::size_t k) {
  if (partitioning.num_points() != collection.count() || partitioning.dim() != collection.dim()) {
    throw InvalidArgument("build_labels: partitioning does not match collection");
  }
  const auto neighbors = exact_topk_batch(queries, collection, k);
  LabeledQuerySet labels;
  labels.queries = queries;
  labels.num_partitions = partitioning.num_partitions();
  labels.k = k;
  labels.targets.reserve(queries.count());
  for (const auto& n : neighbors) labels.targets.push_back(label_from_neighbors(n.ids, partitioning));
  return labels;
}

void save_labels(const LabeledQuerySet& labels, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_u32(out, static_cast<std::uint32_t>(labels.size()));
  write_u32(out, static_cast<std::uint32_t>(labels.num_partitions));
  write_u32(out, static_cast<std::uint32_t>(labels.k));
  for (const auto& t : labels.targets) {
    write_u32(out, static_cast<std::uint32_t>(t.size()));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(idx_t)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

LabeledQuerySet load_labels(const std::filesystem::path& path, QuerySet queries) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const auto read_u32 = [&]() {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
      throw FormatError(path.string() + ": truncated label file");
    }
    return v;
  };
  const std::uint32_t n_q = read_u32();
  LabeledQuerySet labels;
  labels.num_partitions = read_u32();
  labels.k = read_u32();
  if (n_q != queries.count()) {
    throw FormatError(path.string() + ": label count " + std::to_string(n_q) +
                      " != query count " + std::to_string(queries.count()));
  }
  labels.targets.resize(n_q);
  for (auto& t : labels.targets) {
    const std::uint32_t count = read_u32();
    if (count > labels.num_partitions) throw FormatError(path.string() + ": bad target size");
    t.resize(count);
    for (auto& v : t) v = read_u32();
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes in label file");
  }
  labels.queries = std::move(queries);
  labels.validate();
  return labels;
}

}  // namespace ivfrank
