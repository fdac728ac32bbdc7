#include "ivfrank/routing.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "ivfrank/kvfile.h"

namespace ivfrank {

std::string_view to_string(Provenance p) {
  return p == Provenance::kBaseline ? "baseline" : "learnt";
}

Provenance parse_provenance(std::string_view name) {
  if (name == "baseline") return Provenance::kBaseline;
  if (name == "learnt") return Provenance::kLearnt;
  throw InvalidArgument("unknown provenance: " + std::string(name));
}

ProbeBudget ProbeBudget::absolute(std::size_t ell) {
  if (ell == 0) throw InvalidArgument("probe budget must be >= 1");
  return ProbeBudget(false, static_cast<double>(ell));
}

ProbeBudget ProbeBudget::percent(double pct) {
  if (!(pct > 0.0 && pct <= 100.0)) {
    throw InvalidArgument("probe budget percentage must lie in (0, 100]");
  }
  return ProbeBudget(true, pct);
}

ProbeBudget ProbeBudget::parse(std::string_view text) {
  const bool pct = !text.empty() && text.back() == '%';
  if (pct) text.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw InvalidArgument("cannot parse probe budget '" + std::string(text) + "'");
  }
  if (pct) return percent(v);
  if (v < 1.0 || v != std::floor(v)) {
    throw InvalidArgument("absolute probe budget must be a positive integer");
  }
  return absolute(static_cast<std::size_t>(v));
}

std::size_t ProbeBudget::resolve(std::size_t num_partitions) const {
  if (num_partitions == 0) throw InvalidArgument("cannot probe an empty partitioning");
  if (is_percent_) {
    // Tolerance absorbs representation error such as 0.1 * 1000 / 100.
    const double raw = value_ * static_cast<double>(num_partitions) / 100.0;
    const auto ell = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::clamp<std::size_t>(ell, 1, num_partitions);
  }
  const auto ell = static_cast<std::size_t>(value_);
  if (ell > num_partitions) {
    throw InvalidArgument("probe budget " + std::to_string(ell) + " exceeds L = " +
                          std::to_string(num_partitions));
  }
  return ell;
}

std::string ProbeBudget::to_string() const {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value_);
  std::string s(buf, end);
  if (is_percent_) s += '%';
  return s;
}

std::vector<float> score_partitions(std::span<const float> q, const RoutingModel& model) {
  if (q.size() != model.dim()) {
    throw InvalidArgument("score_partitions: query dim " + std::to_string(q.size()) +
                          " != model dim " + std::to_string(model.dim()));
  }
  std::vector<float> scores(model.num_partitions());
  for (std::size_t l = 0; l < scores.size(); ++l) scores[l] = dot(model.weights.row(l), q);
  return scores;
}

std::vector<idx_t> top_partitions(std::span<const float> scores, std::size_t ell) {
  ell = std::min(ell, scores.size());
  std::vector<idx_t> order(scores.size());
  std::iota(order.begin(), order.end(), idx_t{0});
  const auto before = [&](idx_t a, idx_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(ell), order.end(),
                    before);
  order.resize(ell);
  return order;
}

std::vector<idx_t> route(std::span<const float> q, const RoutingModel& model, std::size_t ell) {
  if (ell == 0 || ell > model.num_partitions()) {
    throw InvalidArgument("route: ell must lie in [1, L]");
  }
  return top_partitions(score_partitions(q, model), ell);
}

std::vector<idx_t> route(std::span<const float> q, const RoutingModel& model,
                         const ProbeBudget& budget) {
  return route(q, model, budget.resolve(model.num_partitions()));
}

TopKResult search(std::span<const float> q, const RoutingModel& model,
                  const Partitioning& partitioning, const VectorCollection& collection,
                  const ProbeBudget& budget, std::size_t k) {
  if (model.num_partitions() != partitioning.num_partitions()) {
    throw InvalidArgument("search: model L != partitioning L");
  }
  if (partitioning.num_points() != collection.count()) {
    throw InvalidArgument("search: partitioning does not cover the collection");
  }
  const auto probed = route(q, model, budget);
  std::vector<idx_t> candidates;
  for (idx_t l : probed) {
    const auto& members = partitioning.members[l];
    candidates.insert(candidates.end(), members.begin(), members.end());
  }
  if (candidates.empty()) return {};
  return exact_topk(q, collection, k, std::span<const idx_t>(candidates));
}

RoutingModel baseline_model(const Partitioning& partitioning) {
  return RoutingModel{partitioning.representatives, Provenance::kBaseline, "baseline"};
}

void save_model(const RoutingModel& model, const std::filesystem::path& prefix) {
  write_matrix(model.weights, prefix.string() + ".fbin", VectorFormat::kFbin, true);
  KeyValueFile header;
  header.set("L", std::uint64_t{model.num_partitions()});
  header.set("d", std::uint64_t{model.dim()});
  header.set("provenance", std::string(to_string(model.provenance)));
  header.set("run_id", model.run_id.empty() ? std::string("-") : model.run_id);
  header.save(prefix.string() + ".header");
}

RoutingModel load_model(const std::filesystem::path& prefix) {
  const auto header = KeyValueFile::load(prefix.string() + ".header");
  RoutingModel model;
  model.weights = read_matrix(prefix.string() + ".fbin", VectorFormat::kFbin);
  model.provenance = parse_provenance(header.get("provenance"));
  model.run_id = header.get("run_id");
  if (model.num_partitions() != header.get_u64("L") || model.dim() != header.get_u64("d")) {
    throw FormatError("model header shape disagrees with " + prefix.string() + ".fbin");
  }
  if (!model.weights.all_finite()) throw FormatError("model weights contain non-finite values");
  return model;
}

}  // namespace ivfrank
