#include "commands.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "ivfrank/clustering.h"
#include "ivfrank/evaluation.h"
#include "ivfrank/kvfile.h"
#include "ivfrank/oracle.h"
#include "ivfrank/routing.h"
#include "test_util.h"

namespace ivfrank {
namespace {

int run_cli(std::vector<std::string> args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (out_text) *out_text = out.str();
  if (code != 0) std::cerr << err.str() << out.str();
  return code;
}

std::string file_text(const std::filesystem::path& p) {
  const auto bytes = testing::read_bytes(p);
  return {bytes.begin(), bytes.end()};
}

// Small end-to-end pipeline shared by several tests.
struct Pipeline {
  explicit Pipeline(const std::string& tag) : dir(tag) {}

  std::string out() const { return dir.path().string(); }

  void synth(std::size_t m = 2500, std::size_t n_q = 100) {
    ASSERT_EQ(run_cli({"synth", "--out-dir", out(), "--m", std::to_string(m), "--d", "8",
                       "--centers", "12", "--spread", "0.2", "--n-queries",
                       std::to_string(n_q), "--seed", "5"}),
              0);
  }
  void cluster(const std::string& algo = "shallow") {
    ASSERT_EQ(run_cli({"cluster", "--out-dir", out(), "--algo", algo, "--seed", "7"}), 0);
  }
  void ground_truth(std::size_t k = 1) {
    ASSERT_EQ(run_cli({"ground-truth", "--out-dir", out(), "--k", std::to_string(k)}), 0);
  }
  void train(const std::string& epochs) {
    ASSERT_EQ(run_cli({"train", "--out-dir", out(), "--epochs", epochs, "--lr", "0.01",
                       "--batch-size", "16", "--seed", "3"}),
              0);
  }

  testing::TempDir dir;
};

TEST(Cli, ClusterUsesSqrtRuleAndIsByteIdentical) {
  Pipeline p("cli_cluster");
  p.synth(10000);
  p.cluster("shallow");
  const auto prefix = p.dir / cli::kPartitionPrefix;
  EXPECT_EQ(load_partitioning(prefix).num_partitions(), 100u);
  const auto rep = file_text(prefix.string() + ".rep.fbin");
  const auto assign = file_text(prefix.string() + ".assign.u32");
  const auto header = file_text(prefix.string() + ".header");
  p.cluster("shallow");
  EXPECT_EQ(file_text(prefix.string() + ".rep.fbin"), rep);
  EXPECT_EQ(file_text(prefix.string() + ".assign.u32"), assign);
  EXPECT_EQ(file_text(prefix.string() + ".header"), header);
  EXPECT_TRUE(std::filesystem::exists(p.dir / cli::manifest_file("cluster")));
}

TEST(Cli, StandardClusteringIsByteIdentical) {
  Pipeline p("cli_standard");
  p.synth(3000);
  ASSERT_EQ(run_cli({"cluster", "--out-dir", p.out(), "--algo", "standard", "--clusters", "20",
                     "--threads", "3"}),
            0);
  const auto rep = file_text(p.dir / "partition.rep.fbin");
  ASSERT_EQ(run_cli({"cluster", "--out-dir", p.out(), "--algo", "standard", "--clusters", "20",
                     "--threads", "1"}),
            0);
  EXPECT_EQ(file_text(p.dir / "partition.rep.fbin"), rep);
}

TEST(Cli, UsageErrors) {
  Pipeline p("cli_usage");
  p.synth();
  EXPECT_NE(run_cli({"cluster", "--out-dir", p.out(), "--clusters", "0"}), 0);
  EXPECT_NE(run_cli({"cluster", "--out-dir", p.out(), "--algo", "bogus"}), 0);
  EXPECT_NE(run_cli({"cluster"}), 0);
  EXPECT_NE(run_cli({}), 0);
  EXPECT_FALSE(std::filesystem::exists(p.dir / "partition.header"));
  // Missing inputs are runtime errors.
  EXPECT_EQ(run_cli({"train", "--out-dir", p.out()}), 1);
}

TEST(Cli, GroundTruthSplitsAndLabels) {
  Pipeline p("cli_gt");
  p.synth();
  p.cluster();
  p.ground_truth();
  const std::map<std::string, std::size_t> expected = {{"train", 60}, {"val", 20}, {"test", 20}};
  const auto collection = load_vectors(p.dir / cli::kDataFile, VectorFormat::kFbin);
  const auto partitioning = load_partitioning(p.dir / cli::kPartitionPrefix);
  for (const auto& [split, n] : expected) {
    const auto queries =
        load_queries(p.dir / cli::split_queries_file(split), VectorFormat::kFbin);
    const auto labels = load_labels(p.dir / cli::split_labels_file(split), queries);
    ASSERT_EQ(labels.size(), n) << split;
    const auto fresh = build_labels(queries, collection, partitioning, 1);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(labels.targets[i].size(), 1u);
      EXPECT_EQ(labels.targets[i], fresh.targets[i]);
    }
  }
}

TEST(Cli, ZeroEpochCheckpointEqualsRepresentatives) {
  Pipeline p("cli_epoch0");
  p.synth();
  p.cluster("spherical");
  p.ground_truth();
  p.train("0");
  const auto model = load_model(p.dir / cli::kModelPrefix);
  const auto partitioning = load_partitioning(p.dir / cli::kPartitionPrefix);
  EXPECT_TRUE(testing::bit_equal(model.weights.data(), partitioning.representatives.data()));
  EXPECT_EQ(file_text(p.dir / cli::kTrainLog), "epoch,train_loss,val_loss\n");
}

TEST(Cli, TrainLogOneRowPerEpochAndReproducible) {
  Pipeline p("cli_train");
  p.synth();
  p.cluster();
  p.ground_truth();
  p.train("4");
  const auto log = file_text(p.dir / cli::kTrainLog);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 5);
  const auto weights = file_text(p.dir / "model.learnt.fbin");
  p.train("4");
  EXPECT_EQ(file_text(p.dir / cli::kTrainLog), log);
  EXPECT_EQ(file_text(p.dir / "model.learnt.fbin"), weights);
}

std::vector<SweepRow> rows_for(const std::vector<SweepRow>& rows, const std::string& model) {
  std::vector<SweepRow> out;
  for (const auto& r : rows) {
    if (r.model == model) out.push_back(r);
  }
  return out;
}

void expect_monotone_and_saturated(const std::vector<SweepRow>& rows, std::size_t L) {
  std::map<std::pair<std::string, std::size_t>, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows) groups[{r.model, r.k}].push_back(&r);
  ASSERT_FALSE(groups.empty());
  for (auto& [key, group] : groups) {
    std::stable_sort(group.begin(), group.end(),
                     [](const SweepRow* a, const SweepRow* b) { return a->ell_abs < b->ell_abs; });
    for (std::size_t i = 1; i < group.size(); ++i) {
      EXPECT_GE(group[i]->accuracy, group[i - 1]->accuracy) << key.first << " k=" << key.second;
    }
    EXPECT_EQ(group.back()->ell_abs, L);
    EXPECT_EQ(group.back()->accuracy, 1.0);
  }
}

TEST(Cli, EvalBaselineOnlyAndWithLearnt) {
  Pipeline p("cli_eval");
  p.synth();
  p.cluster();
  p.ground_truth();
  ASSERT_EQ(run_cli({"eval", "--out-dir", p.out()}), 0);
  auto rows = read_sweep_csv(p.dir / cli::kEvalCsv);
  EXPECT_EQ(rows_for(rows, "learnt").size(), 0u);
  // Six default budgets plus the saturation row, two k values.
  EXPECT_EQ(rows_for(rows, "baseline").size(), 14u);
  const std::size_t L = load_partitioning(p.dir / cli::kPartitionPrefix).num_partitions();
  expect_monotone_and_saturated(rows, L);

  p.train("3");
  ASSERT_EQ(run_cli({"eval", "--out-dir", p.out()}), 0);
  rows = read_sweep_csv(p.dir / cli::kEvalCsv);
  EXPECT_EQ(rows_for(rows, "learnt").size(), 14u);
  expect_monotone_and_saturated(rows, L);

  ASSERT_EQ(run_cli({"eval", "--out-dir", p.out(), "--baseline-only"}), 0);
  EXPECT_EQ(rows_for(read_sweep_csv(p.dir / cli::kEvalCsv), "learnt").size(), 0u);
}

TEST(Cli, SweepAndSignificance) {
  Pipeline p("cli_sweep");
  p.synth();
  p.cluster();
  p.ground_truth();
  p.train("3");
  ASSERT_EQ(run_cli({"sweep", "--out-dir", p.out(), "--k", "1,10"}), 0);
  const std::size_t L = load_partitioning(p.dir / cli::kPartitionPrefix).num_partitions();
  expect_monotone_and_saturated(read_sweep_csv(p.dir / cli::kSweepCsv), L);

  // Significance needs exactly one explicit budget.
  EXPECT_NE(run_cli({"eval", "--out-dir", p.out(), "--significance"}), 0);
  std::string text;
  ASSERT_EQ(run_cli({"eval", "--out-dir", p.out(), "--significance", "--ell", "5%"}, &text), 0);
  EXPECT_NE(text.find("McNemar"), std::string::npos);
  const auto sig = KeyValueFile::load(p.dir / cli::kSignificanceFile);
  const double pv = sig.get_double("p_value");
  EXPECT_GE(pv, 0.0);
  EXPECT_LE(pv, 1.0);
}

TEST(Cli, FvecsInput) {
  Pipeline p("cli_fvecs");
  ASSERT_EQ(run_cli({"synth", "--out-dir", p.out(), "--m", "400", "--d", "4", "--n-queries",
                     "20", "--format", "fvecs"}),
            0);
  ASSERT_EQ(run_cli({"cluster", "--out-dir", p.out(), "--data", (p.dir / "data.fvecs").string()}),
            0);
  EXPECT_EQ(load_partitioning(p.dir / cli::kPartitionPrefix).num_partitions(), 20u);
}

}  // namespace
}  // namespace ivfrank
