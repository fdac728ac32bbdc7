#include "ivfrank/evaluation.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ivfrank {

namespace {

// rank[l] = 0-based position of partition l in the full routing order.
std::vector<std::size_t> full_rank(std::span<const float> scores) {
  const auto order = top_partitions(scores, scores.size());
  std::vector<std::size_t> rank(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) rank[order[pos]] = pos;
  return rank;
}

void check_eval_inputs(const QuerySet& queries, const GroundTruth& truth,
                       const Partitioning& partitioning, const RoutingModel& model,
                       std::size_t k) {
  if (truth.neighbors.size() != queries.count()) {
    throw InvalidArgument("ground truth does not match query count");
  }
  if (k == 0 || k > truth.k) {
    throw InvalidArgument("k = " + std::to_string(k) + " outside ground truth depth " +
                          std::to_string(truth.k));
  }
  if (model.num_partitions() != partitioning.num_partitions()) {
    throw InvalidArgument("model L != partitioning L");
  }
  if (model.dim() != queries.dim()) throw InvalidArgument("model dim != query dim");
}

// Fraction of the first k neighbours whose partition rank is below ell.
double hit_fraction(std::span<const idx_t> neighbors, const std::vector<std::size_t>& rank,
                    const Partitioning& partitioning, std::size_t ell, std::size_t k) {
  std::size_t found = 0;
  const std::size_t depth = std::min(k, neighbors.size());
  for (std::size_t j = 0; j < depth; ++j) {
    if (rank[partitioning.assignment[neighbors[j]]] < ell) ++found;
  }
  return static_cast<double>(found) / static_cast<double>(k);
}

double log_gamma_series_p(double a, double x) {
  // P(a, x) via its power series; converges quickly for x < a + 1.
  double term = 1.0 / a;
  double sum = term;
  for (int n = 1; n < 1000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_continued_fraction_q(double a, double x) {
  // Q(a, x) via the Legendre continued fraction, modified Lentz evaluation.
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

// Shortest form that reads back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

}  // namespace

GroundTruth compute_ground_truth(const QuerySet& queries, const VectorCollection& collection,
                                 std::size_t k) {
  GroundTruth truth;
  truth.k = k;
  auto results = exact_topk_batch(queries, collection, k);
  truth.neighbors.reserve(results.size());
  for (auto& r : results) truth.neighbors.push_back(std::move(r.ids));
  return truth;
}

double topk_accuracy(const QuerySet& queries, const GroundTruth& truth,
                     const Partitioning& partitioning, const RoutingModel& model,
                     const ProbeBudget& budget, std::size_t k) {
  check_eval_inputs(queries, truth, partitioning, model, k);
  if (queries.count() == 0) throw InvalidArgument("topk_accuracy: no queries");
  const std::size_t ell = budget.resolve(model.num_partitions());
  std::vector<double> per_query(queries.count());
  parallel_for(queries.count(), [&](std::size_t b, std::size_t e) {
    std::vector<std::size_t> rank(model.num_partitions(), std::numeric_limits<std::size_t>::max());
    for (std::size_t i = b; i < e; ++i) {
      const auto routed = route(queries[i], model, ell);
      for (std::size_t pos = 0; pos < routed.size(); ++pos) rank[routed[pos]] = pos;
      per_query[i] = hit_fraction(truth.neighbors[i], rank, partitioning, ell, k);
      for (idx_t l : routed) rank[l] = std::numeric_limits<std::size_t>::max();
    }
  });
  double sum = 0.0;
  for (double v : per_query) sum += v;
  return sum / static_cast<double>(queries.count());
}

double topk_accuracy(const QuerySet& queries, const VectorCollection& collection,
                     const Partitioning& partitioning, const RoutingModel& model,
                     const ProbeBudget& budget, std::size_t k) {
  return topk_accuracy(queries, compute_ground_truth(queries, collection, k), partitioning, model,
                       budget, k);
}

std::vector<bool> top1_hits(const QuerySet& queries, const GroundTruth& truth,
                            const Partitioning& partitioning, const RoutingModel& model,
                            const ProbeBudget& budget) {
  check_eval_inputs(queries, truth, partitioning, model, 1);
  const std::size_t ell = budget.resolve(model.num_partitions());
  std::vector<char> hit(queries.count(), 0);
  parallel_for(queries.count(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const idx_t target = partitioning.assignment[truth.neighbors[i].front()];
      const auto routed = route(queries[i], model, ell);
      hit[i] = std::ranges::find(routed, target) != routed.end();
    }
  });
  return {hit.begin(), hit.end()};
}

std::size_t partition_rank(std::span<const float> scores, idx_t partition) {
  if (partition >= scores.size()) throw InvalidArgument("partition_rank: index out of range");
  // Partitions strictly ahead under the routing order (score desc, index asc).
  std::size_t ahead = 0;
  const float s = scores[partition];
  for (std::size_t l = 0; l < scores.size(); ++l) {
    if (scores[l] > s || (scores[l] == s && l < partition)) ++ahead;
  }
  return ahead + 1;
}

double mrr(const LabeledQuerySet& labels, const RoutingModel& model) {
  if (labels.size() == 0) throw InvalidArgument("mrr: empty label set");
  if (labels.num_partitions != model.num_partitions()) throw InvalidArgument("mrr: L mismatch");
  for (const auto& t : labels.targets) {
    if (t.size() != 1) throw InvalidArgument("mrr requires exactly one relevant partition");
  }
  std::vector<double> rr(labels.size());
  parallel_for(labels.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto scores = score_partitions(labels.queries[i], model);
      rr[i] = 1.0 / static_cast<double>(partition_rank(scores, labels.targets[i].front()));
    }
  });
  double sum = 0.0;
  for (double v : rr) sum += v;
  return sum / static_cast<double>(labels.size());
}

double regularized_gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw InvalidArgument("regularized_gamma_q: bad arguments");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  if (x < a + 1.0) return 1.0 - log_gamma_series_p(a, x);
  return gamma_continued_fraction_q(a, x);
}

double chi_square_sf(double x, double dof) {
  if (!(dof > 0.0)) throw InvalidArgument("chi_square_sf: dof must be positive");
  if (x <= 0.0) return 1.0;
  return regularized_gamma_q(dof / 2.0, x / 2.0);
}

McNemarResult mcnemar(const std::vector<bool>& hits_a, const std::vector<bool>& hits_b) {
  if (hits_a.size() != hits_b.size()) {
    throw InvalidArgument("mcnemar: indicator vectors differ in length");
  }
  McNemarResult r;
  for (std::size_t i = 0; i < hits_a.size(); ++i) {
    if (hits_a[i] && !hits_b[i]) ++r.b;
    if (!hits_a[i] && hits_b[i]) ++r.c;
  }
  const std::size_t discordant = r.b + r.c;
  if (discordant == 0) return r;
  const double diff =
      std::abs(static_cast<double>(r.b) - static_cast<double>(r.c)) - 1.0;
  r.statistic = diff * diff / static_cast<double>(discordant);
  r.p_value = chi_square_sf(r.statistic, 1.0);
  return r;
}

EvalReport sweep(const QuerySet& queries, const VectorCollection& collection,
                 const Partitioning& partitioning, const std::vector<NamedModel>& models,
                 const std::vector<ProbeBudget>& ells, const std::vector<std::size_t>& ks) {
  if (models.empty() || ells.empty() || ks.empty()) {
    throw InvalidArgument("sweep: model, ell and k grids must be non-empty");
  }
  if (queries.count() == 0) throw InvalidArgument("sweep: no queries");
  const std::size_t k_max = *std::max_element(ks.begin(), ks.end());
  if (std::ranges::find(ks, std::size_t{0}) != ks.end()) throw InvalidArgument("sweep: k = 0");
  const GroundTruth truth = compute_ground_truth(queries, collection, k_max);
  const std::size_t num_partitions = partitioning.num_partitions();

  EvalReport report;
  report.ells = ells;
  for (const auto& m : models) {
    check_eval_inputs(queries, truth, partitioning, m.model, k_max);
    report.model_names.push_back(m.name);
  }

  std::vector<std::size_t> ell_abs;
  for (const auto& b : ells) ell_abs.push_back(b.resolve(num_partitions));

  for (const auto& m : models) {
    // fractions[(e * ks + kk) * n + i]
    const std::size_t n = queries.count();
    std::vector<double> fractions(ells.size() * ks.size() * n);
    std::vector<char> hits(ells.size() * n);
    parallel_for(n, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const auto rank = full_rank(score_partitions(queries[i], m.model));
        const auto& nbrs = truth.neighbors[i];
        for (std::size_t ei = 0; ei < ells.size(); ++ei) {
          for (std::size_t ki = 0; ki < ks.size(); ++ki) {
            fractions[(ei * ks.size() + ki) * n + i] =
                hit_fraction(nbrs, rank, partitioning, ell_abs[ei], ks[ki]);
          }
          hits[ei * n + i] = rank[partitioning.assignment[nbrs.front()]] < ell_abs[ei];
        }
      }
    });
    auto& model_hits = report.top1_hits.emplace_back();
    for (std::size_t ei = 0; ei < ells.size(); ++ei) {
      model_hits.emplace_back(hits.begin() + static_cast<std::ptrdiff_t>(ei * n),
                              hits.begin() + static_cast<std::ptrdiff_t>((ei + 1) * n));
      for (std::size_t ki = 0; ki < ks.size(); ++ki) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) sum += fractions[(ei * ks.size() + ki) * n + i];
        SweepRow row;
        row.model = m.name;
        row.algorithm = std::string(to_string(partitioning.algorithm));
        row.ell_pct = ells[ei].is_percent()
                          ? ells[ei].value()
                          : 100.0 * static_cast<double>(ell_abs[ei]) /
                                static_cast<double>(num_partitions);
        row.ell_abs = ell_abs[ei];
        row.k = ks[ki];
        row.accuracy = sum / static_cast<double>(n);
        row.n_queries = n;
        report.rows.push_back(std::move(row));
      }
    }
  }
  return report;
}

void write_sweep_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "model,algorithm,ell_pct,ell_abs,k,accuracy,n_queries\n";
  for (const auto& r : report.rows) {
    out << r.model << ',' << r.algorithm << ',' << format_double(r.ell_pct) << ',' << r.ell_abs
        << ',' << r.k << ',' << format_double(r.accuracy) << ',' << r.n_queries << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "model,algorithm,ell_pct,ell_abs,k,accuracy,n_queries") {
    throw FormatError(path.string() + ": unexpected sweep CSV header");
  }
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) throw FormatError(path.string() + ": bad row '" + line + "'");
    try {
      SweepRow r;
      r.model = cells[0];
      r.algorithm = cells[1];
      r.ell_pct = std::stod(cells[2]);
      r.ell_abs = std::stoull(cells[3]);
      r.k = std::stoull(cells[4]);
      r.accuracy = std::stod(cells[5]);
      r.n_queries = std::stoull(cells[6]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": bad number in row '" + line + "'");
    }
  }
  return rows;
}

std::vector<ProbeBudget> default_ell_grid() {
  return {ProbeBudget::percent(0.1), ProbeBudget::percent(0.5), ProbeBudget::percent(1),
          ProbeBudget::percent(2),   ProbeBudget::percent(5),   ProbeBudget::percent(10)};
}

std::vector<std::size_t> default_k_grid() { return {1, 10}; }

}  // namespace ivfrank
