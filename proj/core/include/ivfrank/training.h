#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ivfrank/clustering.h"
#include "ivfrank/common.h"
#include "ivfrank/oracle.h"
#include "ivfrank/routing.h"

namespace ivfrank {

enum class LossKind {
  kTop1CrossEntropy,  ///< "top1_ce": -log softmax(Wq)[target]
  kTopKXeNdcg,        ///< "topk_xendcg": gain-weighted cross-entropy over the target set
};
enum class InitKind { kFromPartitioning, kZeros, kRandom };

LossKind parse_loss(std::string_view name);
std::string_view to_string(LossKind loss);
InitKind parse_init(std::string_view name);
std::string_view to_string(InitKind init);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 512;
  std::size_t max_epochs = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kTop1CrossEntropy;
  InitKind init = InitKind::kFromPartitioning;

  /// Throws InvalidArgument on out-of-range hyperparameters.
  void validate() const;
};

// Loss building blocks. All arithmetic is in double.

/// Max-shifted softmax. Throws InvalidArgument on non-finite input.
std::vector<double> softmax(std::span<const double> scores);

/// log softmax(scores)[i] for every i, via log-sum-exp.
std::vector<double> log_softmax(std::span<const double> scores);

/// -log softmax(scores)[target].
double loss_top1(std::span<const double> scores, idx_t target);

/// Per-partition gain weights (2^{y_i} - gamma_i) / sum_j (2^{y_j} - gamma_j)
/// with y the 0/1 indicator of `target_set`.
std::vector<double> topk_weights(std::span<const idx_t> target_set,
                                 std::span<const double> gammas);

/// -sum_i w_i log softmax(scores)_i with w = topk_weights(target_set, gammas).
double loss_topk(std::span<const double> scores, std::span<const idx_t> target_set,
                 std::span<const double> gammas);

/// W q in double.
std::vector<double> linear_scores(const DoubleMatrix& weights, std::span<const float> q);

/// d loss_top1(W q, target) / dW = (softmax(W q) - e_target) q^T.
DoubleMatrix grad_top1(std::span<const float> q, const DoubleMatrix& weights, idx_t target);

/// d loss_topk(W q, ...) / dW = (softmax(W q) - w) q^T, w the gain weights.
DoubleMatrix grad_topk(std::span<const float> q, const DoubleMatrix& weights,
                       std::span<const idx_t> target_set, std::span<const double> gammas);

/// Stochastic gains: one gamma per partition per query, uniform on [0, 1).
struct GainNoise {
  std::size_t num_partitions = 0;
  std::vector<double> gammas;  ///< n_queries x L, row-major
  std::uint64_t seed = 0;

  static GainNoise draw(std::size_t n_queries, std::size_t num_partitions, std::uint64_t seed);
  std::span<const double> row(std::size_t query) const {
    return {gammas.data() + query * num_partitions, num_partitions};
  }
};

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;

  AdamState() = default;
  explicit AdamState(std::size_t n) : first_moment(n, 0.0), second_moment(n, 0.0) {}
};

/// One bias-corrected Adam update at step t (1-based). Throws
/// InvalidArgument on shape mismatch, t = 0 or a non-finite gradient.
void adam_step(std::span<double> weights, std::span<const double> grad, AdamState& state,
               const TrainConfig& config, std::size_t t);

struct EpochRecord {
  std::size_t epoch = 0;  ///< 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainReport {
  /// Validation loss of the initial weights; the epoch-0 candidate for model
  /// selection.
  double initial_val_loss = 0.0;
  std::vector<EpochRecord> epochs;
  /// Epoch whose weights were returned; 0 means the initial weights.
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  /// Set when a non-finite training loss stopped the run early.
  bool diverged = false;
};

struct TrainResult {
  RoutingModel model;
  TrainReport report;
};

/// Mini-batch Adam on the configured loss, keeping the weights with the
/// lowest validation loss (earliest epoch on ties).
TrainResult train(const LabeledQuerySet& train_set, const LabeledQuerySet& val_set,
                  const Partitioning& partitioning, const TrainConfig& config);

/// Mean validation-style loss of `weights` over a labeled set (gammas = 0 for
/// the top-k loss).
double mean_loss(const DoubleMatrix& weights, const LabeledQuerySet& labels, LossKind loss);

/// CSV with header `epoch,train_loss,val_loss`, one row per completed epoch.
void write_train_log(const TrainReport& report, const std::filesystem::path& path);

}  // namespace ivfrank
