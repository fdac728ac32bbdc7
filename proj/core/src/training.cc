#include "ivfrank/training.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "rng.h"

namespace ivfrank {

namespace {

// Batch gradients are reduced over a fixed number of chunks, independent of
// the worker count, so training is deterministic under any --threads.
constexpr std::size_t kGradChunks = 8;

void check_scores(std::span<const double> scores) {
  if (scores.empty()) throw InvalidArgument("empty score vector");
  for (double s : scores) {
    if (!std::isfinite(s)) throw InvalidArgument("non-finite score");
  }
}

double log_sum_exp(std::span<const double> scores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - mx);
  return mx + std::log(sum);
}

void check_targets(std::span<const idx_t> target_set, std::size_t num_partitions) {
  if (target_set.empty()) throw InvalidArgument("empty target set");
  for (idx_t t : target_set) {
    if (t >= num_partitions) throw InvalidArgument("target index out of range");
  }
}

// Residual r such that the per-query gradient is r q^T; also returns the loss.
double residual(std::span<const double> scores, const LabeledQuerySet& labels, std::size_t i,
                LossKind loss, std::span<const double> gammas, std::vector<double>& r) {
  r = softmax(scores);
  const auto& target = labels.targets[i];
  if (loss == LossKind::kTop1CrossEntropy) {
    const double value = loss_top1(scores, target.front());
    r[target.front()] -= 1.0;
    return value;
  }
  const auto w = topk_weights(target, gammas);
  const auto logp = log_softmax(scores);
  double value = 0.0;
  for (std::size_t l = 0; l < r.size(); ++l) {
    value -= w[l] * logp[l];
    r[l] -= w[l];
  }
  return value;
}

DoubleMatrix initial_weights(const Partitioning& partitioning, const TrainConfig& config) {
  const std::size_t rows = partitioning.num_partitions();
  const std::size_t cols = partitioning.dim();
  switch (config.init) {
    case InitKind::kFromPartitioning:
      return partitioning.representatives.cast<double>();
    case InitKind::kZeros:
      return DoubleMatrix(rows, cols, 0.0);
    case InitKind::kRandom: {
      DoubleMatrix w(rows, cols);
      std::mt19937_64 rng(detail::mix_seed(config.seed, 7));
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cols)));
      for (double& v : w.data()) v = static_cast<double>(static_cast<float>(normal(rng)));
      return w;
    }
  }
  throw InvalidArgument("unknown init");
}

void check_labels(const LabeledQuerySet& labels, const Partitioning& partitioning,
                  const char* name) {
  if (labels.size() == 0) throw InvalidArgument(std::string(name) + " set is empty");
  if (labels.num_partitions != partitioning.num_partitions()) {
    throw InvalidArgument(std::string(name) + " labels have L = " +
                          std::to_string(labels.num_partitions) + ", partitioning has L = " +
                          std::to_string(partitioning.num_partitions()));
  }
  if (labels.queries.dim() != partitioning.dim()) {
    throw InvalidArgument(std::string(name) + " queries have the wrong dimension");
  }
  labels.validate();
}

}  // namespace

LossKind parse_loss(std::string_view name) {
  if (name == "top1_ce") return LossKind::kTop1CrossEntropy;
  if (name == "topk_xendcg") return LossKind::kTopKXeNdcg;
  throw InvalidArgument("unknown loss: " + std::string(name));
}

std::string_view to_string(LossKind loss) {
  return loss == LossKind::kTop1CrossEntropy ? "top1_ce" : "topk_xendcg";
}

InitKind parse_init(std::string_view name) {
  if (name == "from_partitioning") return InitKind::kFromPartitioning;
  if (name == "zeros") return InitKind::kZeros;
  if (name == "random") return InitKind::kRandom;
  throw InvalidArgument("unknown init: " + std::string(name));
}

std::string_view to_string(InitKind init) {
  switch (init) {
    case InitKind::kFromPartitioning: return "from_partitioning";
    case InitKind::kZeros: return "zeros";
    case InitKind::kRandom: return "random";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be positive");
  }
  if (batch_size == 0) throw InvalidArgument("batch size must be >= 1");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0)) throw InvalidArgument("beta1 must lie in (0, 1)");
  if (!(adam_beta2 > 0.0 && adam_beta2 < 1.0)) throw InvalidArgument("beta2 must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw InvalidArgument("adam epsilon must be positive");
}

std::vector<double> softmax(std::span<const double> scores) {
  check_scores(scores);
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(scores[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> log_softmax(std::span<const double> scores) {
  check_scores(scores);
  const double lse = log_sum_exp(scores);
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scores[i] - lse;
  return out;
}

double loss_top1(std::span<const double> scores, idx_t target) {
  check_scores(scores);
  if (target >= scores.size()) throw InvalidArgument("loss_top1: target out of range");
  return log_sum_exp(scores) - scores[target];
}

std::vector<double> topk_weights(std::span<const idx_t> target_set,
                                 std::span<const double> gammas) {
  check_targets(target_set, gammas.size());
  std::vector<double> w(gammas.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(gammas[i] >= 0.0 && gammas[i] < 1.0)) {
      throw InvalidArgument("gammas must lie in [0, 1)");
    }
    w[i] = 1.0 - gammas[i];
  }
  for (idx_t t : target_set) w[t] = 2.0 - gammas[t];
  double sum = 0.0;
  for (double v : w) sum += v;
  for (double& v : w) v /= sum;
  return w;
}

double loss_topk(std::span<const double> scores, std::span<const idx_t> target_set,
                 std::span<const double> gammas) {
  if (scores.size() != gammas.size()) throw InvalidArgument("loss_topk: gammas length != L");
  const auto w = topk_weights(target_set, gammas);
  const auto logp = log_softmax(scores);
  double loss = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) loss -= w[i] * logp[i];
  return loss;
}

std::vector<double> linear_scores(const DoubleMatrix& weights, std::span<const float> q) {
  if (q.size() != weights.cols()) throw InvalidArgument("query dim != weight columns");
  std::vector<double> s(weights.rows());
  for (std::size_t l = 0; l < s.size(); ++l) {
    const auto w = weights.row(l);
    double acc = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) acc += w[j] * static_cast<double>(q[j]);
    s[l] = acc;
  }
  return s;
}

namespace {

DoubleMatrix outer(std::span<const double> r, std::span<const float> q) {
  DoubleMatrix g(r.size(), q.size());
  for (std::size_t l = 0; l < r.size(); ++l) {
    auto row = g.row(l);
    for (std::size_t j = 0; j < q.size(); ++j) row[j] = r[l] * static_cast<double>(q[j]);
  }
  return g;
}

}  // namespace

DoubleMatrix grad_top1(std::span<const float> q, const DoubleMatrix& weights, idx_t target) {
  const auto scores = linear_scores(weights, q);
  if (target >= scores.size()) throw InvalidArgument("grad_top1: target out of range");
  auto r = softmax(scores);
  r[target] -= 1.0;
  return outer(r, q);
}

DoubleMatrix grad_topk(std::span<const float> q, const DoubleMatrix& weights,
                       std::span<const idx_t> target_set, std::span<const double> gammas) {
  const auto scores = linear_scores(weights, q);
  if (gammas.size() != scores.size()) throw InvalidArgument("grad_topk: gammas length != L");
  auto r = softmax(scores);
  const auto w = topk_weights(target_set, gammas);
  for (std::size_t l = 0; l < r.size(); ++l) r[l] -= w[l];
  return outer(r, q);
}

GainNoise GainNoise::draw(std::size_t n_queries, std::size_t num_partitions,
                          std::uint64_t seed) {
  GainNoise noise;
  noise.num_partitions = num_partitions;
  noise.seed = seed;
  noise.gammas.resize(n_queries * num_partitions);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double& g : noise.gammas) {
    do {
      g = unit(rng);
    } while (g >= 1.0);  // some standard libraries can return the upper bound
  }
  return noise;
}

void adam_step(std::span<double> weights, std::span<const double> grad, AdamState& state,
               const TrainConfig& config, std::size_t t) {
  if (t == 0) throw InvalidArgument("adam_step: t must be >= 1");
  if (grad.size() != weights.size() || state.first_moment.size() != weights.size() ||
      state.second_moment.size() != weights.size()) {
    throw InvalidArgument("adam_step: shape mismatch");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw InvalidArgument("adam_step: non-finite gradient");
  }
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = b1 * m + (1.0 - b1) * grad[i];
    v = b2 * v + (1.0 - b2) * grad[i] * grad[i];
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    weights[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_eps);
  }
}

double mean_loss(const DoubleMatrix& weights, const LabeledQuerySet& labels, LossKind loss) {
  if (labels.size() == 0) throw InvalidArgument("mean_loss: empty label set");
  std::vector<double> per_query(labels.size());
  const std::vector<double> zero_gammas(weights.rows(), 0.0);
  parallel_for(labels.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const auto scores = linear_scores(weights, labels.queries[i]);
      per_query[i] = loss == LossKind::kTop1CrossEntropy
                         ? loss_top1(scores, labels.targets[i].front())
                         : loss_topk(scores, labels.targets[i], zero_gammas);
    }
  });
  double sum = 0.0;
  for (double v : per_query) sum += v;
  return sum / static_cast<double>(labels.size());
}

TrainResult train(const LabeledQuerySet& train_set, const LabeledQuerySet& val_set,
                  const Partitioning& partitioning, const TrainConfig& config) {
  config.validate();
  check_labels(train_set, partitioning, "training");
  check_labels(val_set, partitioning, "validation");

  DoubleMatrix weights = initial_weights(partitioning, config);
  const std::size_t num_partitions = weights.rows();
  const std::size_t dim = weights.cols();

  TrainReport report;
  report.initial_val_loss = mean_loss(weights, val_set, config.loss);
  report.best_val_loss = report.initial_val_loss;
  report.best_epoch = 0;
  DoubleMatrix best = weights;

  AdamState adam(weights.size());
  std::size_t step = 0;
  std::mt19937_64 shuffle_rng(detail::mix_seed(config.seed, 5));
  std::vector<idx_t> order(train_set.size());
  std::iota(order.begin(), order.end(), idx_t{0});

  std::vector<DoubleMatrix> chunk_grads(kGradChunks, DoubleMatrix(num_partitions, dim));
  std::vector<double> chunk_loss(kGradChunks);
  DoubleMatrix grad(num_partitions, dim);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    GainNoise noise;
    if (config.loss == LossKind::kTopKXeNdcg) {
      noise = GainNoise::draw(train_set.size(), num_partitions,
                              detail::mix_seed(config.seed, 1000 + epoch));
    }

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const std::size_t batch = end - start;
      const std::size_t per_chunk = (batch + kGradChunks - 1) / kGradChunks;

      parallel_for(kGradChunks, [&](std::size_t cb, std::size_t ce) {
        std::vector<double> r;
        for (std::size_t c = cb; c < ce; ++c) {
          auto& g = chunk_grads[c];
          std::ranges::fill(g.data(), 0.0);
          chunk_loss[c] = 0.0;
          const std::size_t lo = start + std::min(batch, c * per_chunk);
          const std::size_t hi = start + std::min(batch, (c + 1) * per_chunk);
          for (std::size_t pos = lo; pos < hi; ++pos) {
            const idx_t i = order[pos];
            const auto q = train_set.queries[i];
            const auto scores = linear_scores(weights, q);
            const std::span<const double> gammas =
                config.loss == LossKind::kTopKXeNdcg ? noise.row(i) : std::span<const double>{};
            chunk_loss[c] += residual(scores, train_set, i, config.loss, gammas, r);
            for (std::size_t l = 0; l < num_partitions; ++l) {
              if (r[l] == 0.0) continue;
              auto row = g.row(l);
              for (std::size_t j = 0; j < dim; ++j) row[j] += r[l] * static_cast<double>(q[j]);
            }
          }
        }
      });

      std::ranges::fill(grad.data(), 0.0);
      for (std::size_t c = 0; c < kGradChunks; ++c) {
        const auto src = chunk_grads[c].data();
        auto dst = grad.data();
        for (std::size_t n = 0; n < dst.size(); ++n) dst[n] += src[n];
        epoch_loss += chunk_loss[c];
      }
      const double inv = 1.0 / static_cast<double>(batch);
      for (double& v : grad.data()) v *= inv;

      if (!grad.all_finite()) {
        report.diverged = true;
        break;
      }
      adam_step(weights.data(), grad.data(), adam, config, ++step);
    }

    const double train_loss = epoch_loss / static_cast<double>(train_set.size());
    if (report.diverged || !std::isfinite(train_loss) || !weights.all_finite()) {
      report.diverged = true;
      break;
    }
    const double val_loss = mean_loss(weights, val_set, config.loss);
    report.epochs.push_back({epoch, train_loss, val_loss});
    if (val_loss < report.best_val_loss) {
      report.best_val_loss = val_loss;
      report.best_epoch = epoch;
      best = weights;
    }
  }

  TrainResult result;
  result.model.weights = best.cast<float>();
  result.model.provenance = Provenance::kLearnt;
  result.model.run_id = "seed" + std::to_string(config.seed) + "-epoch" +
                        std::to_string(report.best_epoch);
  result.report = std::move(report);
  return result;
}

void write_train_log(const TrainReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.precision(17);
  out << "epoch,train_loss,val_loss\n";
  for (const auto& e : report.epochs) {
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace ivfrank
