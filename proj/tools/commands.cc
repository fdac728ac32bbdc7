#include "commands.h"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "ivfrank/clustering.h"
#include "ivfrank/dataset.h"
#include "ivfrank/evaluation.h"
#include "ivfrank/kvfile.h"
#include "ivfrank/oracle.h"
#include "ivfrank/routing.h"
#include "ivfrank/training.h"

namespace ivfrank::cli {

namespace fs = std::filesystem;

std::string split_queries_file(const std::string& split) { return "queries." + split + ".fbin"; }
std::string split_labels_file(const std::string& split) { return "labels." + split + ".bin"; }
std::string manifest_file(const std::string& command) { return command + ".manifest"; }

namespace {

const char* const kSplits[] = {"train", "val", "test"};

struct CommonOptions {
  std::string out_dir;
  unsigned threads = 0;
  std::string format;  // empty: infer from the file extension
};

struct SynthOptions {
  std::size_t m = 10000;
  std::size_t d = 32;
  std::size_t centers = 64;
  double spread = 0.15;
  std::size_t n_queries = 1000;
  std::uint64_t seed = 0;
  std::uint64_t query_seed = 1;
};

struct ClusterOptions {
  std::string data;
  std::string algo = "standard";
  std::optional<std::size_t> clusters;
  std::size_t max_iters = 25;
  std::uint64_t seed = 0;
};

struct GroundTruthOptions {
  std::string data;
  std::string queries;
  std::size_t k = 1;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  double lr = 1e-4;
  std::size_t batch_size = 512;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  std::string loss;  // empty: top1_ce for k = 1 labels, topk_xendcg otherwise
  std::string init = "from_partitioning";
};

struct EvalOptions {
  std::string data;
  std::string queries;
  std::string model;
  bool baseline_only = false;
  std::vector<std::string> ell;
  std::vector<std::size_t> k;
  bool significance = false;
};

VectorFormat format_for(const std::string& path, const std::string& flag) {
  if (!flag.empty()) return parse_vector_format(flag);
  return fs::path(path).extension() == ".fvecs" ? VectorFormat::kFvecs : VectorFormat::kFbin;
}

std::string path_in(const CommonOptions& c, const std::string& name) {
  return (fs::path(c.out_dir) / name).string();
}

std::string or_default(const std::string& value, const std::string& fallback) {
  return value.empty() ? fallback : value;
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

// Writes the manifest after checking every listed output exists.
void write_manifest(const CommonOptions& c, const std::string& command, KeyValueFile kv,
                    const std::vector<std::string>& outputs) {
  kv.set("command", command);
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (!fs::exists(outputs[i])) throw IoError("declared output missing: " + outputs[i]);
    kv.set("output." + std::to_string(i), outputs[i]);
  }
  kv.set("threads", std::uint64_t{c.threads});
  kv.save(path_in(c, manifest_file(command)));
}

void add_common(CLI::App* sub, CommonOptions& c) {
  sub->add_option("--out-dir", c.out_dir, "Pipeline directory for inputs and outputs")
      ->required();
  sub->add_option("--threads", c.threads, "Worker threads (0 = auto)")->capture_default_str();
  sub->add_option("--format", c.format, "Vector file format (default: from extension)")
      ->check(CLI::IsMember({"fbin", "fvecs"}));
}

int cmd_synth(const CommonOptions& c, const SynthOptions& o, std::ostream& out) {
  fs::create_directories(c.out_dir);
  const auto format = c.format.empty() ? VectorFormat::kFbin : parse_vector_format(c.format);
  const std::string ext = format == VectorFormat::kFbin ? ".fbin" : ".fvecs";
  const auto data_path = path_in(c, std::string("data") + ext);
  const auto queries_path = path_in(c, std::string("queries") + ext);
  save_vectors(synth_clustered(o.m, o.d, o.centers, o.spread, o.seed), data_path, format);
  save_queries(synth_queries(o.n_queries, o.d, o.centers, o.spread, o.seed, o.query_seed),
               queries_path, format);
  load_vectors(data_path, format);
  load_queries(queries_path, format);

  KeyValueFile kv;
  kv.set("m", std::uint64_t{o.m});
  kv.set("d", std::uint64_t{o.d});
  kv.set("centers", std::uint64_t{o.centers});
  kv.set("spread", o.spread);
  kv.set("n_queries", std::uint64_t{o.n_queries});
  kv.set("seed", o.seed);
  kv.set("query_seed", o.query_seed);
  write_manifest(c, "synth", kv, {data_path, queries_path});
  out << "wrote " << o.m << " vectors and " << o.n_queries << " queries (d=" << o.d << ") to "
      << c.out_dir << "\n";
  return 0;
}

int cmd_cluster(const CommonOptions& c, const ClusterOptions& o, std::ostream& out) {
  const auto data_path = or_default(o.data, path_in(c, kDataFile));
  require_file(data_path, "data file");
  const auto collection = load_vectors(data_path, format_for(data_path, c.format));
  const auto algo = parse_algorithm(o.algo);

  ClusteringParams params;
  params.num_partitions = o.clusters.value_or(default_num_partitions(collection.count()));
  params.max_iters = o.max_iters;
  params.seed = o.seed;
  const auto partitioning = cluster(collection, algo, params);

  fs::create_directories(c.out_dir);
  const auto prefix = path_in(c, kPartitionPrefix);
  save_partitioning(partitioning, prefix);
  load_partitioning(prefix).validate();

  KeyValueFile kv;
  kv.set("data", data_path);
  kv.set("algorithm", std::string(to_string(algo)));
  kv.set("metric", std::string(to_string(partitioning.metric)));
  kv.set("L", std::uint64_t{partitioning.num_partitions()});
  kv.set("m", std::uint64_t{collection.count()});
  kv.set("max_iters", std::uint64_t{o.max_iters});
  kv.set("iterations", std::uint64_t{partitioning.objective_history.size()});
  kv.set("seed", o.seed);
  kv.set("partition", prefix);
  write_manifest(c, "cluster", kv,
                 {prefix + ".rep.fbin", prefix + ".assign.u32", prefix + ".header"});
  out << to_string(algo) << " clustering: m=" << collection.count()
      << " L=" << partitioning.num_partitions() << " -> " << prefix << "\n";
  return 0;
}

int cmd_ground_truth(const CommonOptions& c, const GroundTruthOptions& o, std::ostream& out) {
  const auto data_path = or_default(o.data, path_in(c, kDataFile));
  const auto queries_path = or_default(o.queries, path_in(c, kQueriesFile));
  const auto prefix = path_in(c, kPartitionPrefix);
  require_file(data_path, "data file");
  require_file(queries_path, "query file");
  require_file(prefix + ".header", "partitioning");
  const auto collection = load_vectors(data_path, format_for(data_path, c.format));
  const auto queries = load_queries(queries_path, format_for(queries_path, c.format));
  const auto partitioning = load_partitioning(prefix);
  check_same_dim(queries, collection);

  SplitSpec spec;
  spec.seed = o.seed;
  const auto split = split_queries(queries, spec);
  const QuerySet* parts[] = {&split.train, &split.val, &split.test};

  std::vector<std::string> outputs;
  KeyValueFile kv;
  for (int s = 0; s < 3; ++s) {
    const auto qpath = path_in(c, split_queries_file(kSplits[s]));
    const auto lpath = path_in(c, split_labels_file(kSplits[s]));
    const auto labels = build_labels(*parts[s], collection, partitioning, o.k);
    save_queries(*parts[s], qpath, VectorFormat::kFbin);
    save_labels(labels, lpath);
    load_labels(lpath, load_queries(qpath, VectorFormat::kFbin));
    outputs.push_back(qpath);
    outputs.push_back(lpath);
    kv.set(std::string("n_") + kSplits[s], std::uint64_t{parts[s]->count()});
    out << kSplits[s] << ": " << parts[s]->count() << " queries\n";
  }

  const auto split_path = path_in(c, kSplitFile);
  {
    std::ofstream f(split_path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + split_path);
    f << "query,split\n";
    const std::vector<idx_t>* idx[] = {&split.indices.train, &split.indices.val,
                                       &split.indices.test};
    for (int s = 0; s < 3; ++s) {
      for (idx_t i : *idx[s]) f << i << ',' << kSplits[s] << '\n';
    }
    if (!f) throw IoError("write failed: " + split_path);
  }
  outputs.push_back(split_path);

  kv.set("data", data_path);
  kv.set("queries", queries_path);
  kv.set("partition", prefix);
  kv.set("k", std::uint64_t{o.k});
  kv.set("seed", o.seed);
  write_manifest(c, "ground-truth", kv, outputs);
  return 0;
}

int cmd_train(const CommonOptions& c, const TrainOptions& o, std::ostream& out) {
  const auto prefix = path_in(c, kPartitionPrefix);
  require_file(prefix + ".header", "partitioning");
  const auto partitioning = load_partitioning(prefix);
  auto load_split = [&](const char* s) {
    const auto qpath = path_in(c, split_queries_file(s));
    const auto lpath = path_in(c, split_labels_file(s));
    require_file(qpath, "split queries");
    require_file(lpath, "labels");
    return load_labels(lpath, load_queries(qpath, VectorFormat::kFbin));
  };
  const auto train_set = load_split("train");
  const auto val_set = load_split("val");

  TrainConfig config;
  config.learning_rate = o.lr;
  config.batch_size = o.batch_size;
  config.max_epochs = o.epochs;
  config.seed = o.seed;
  config.init = parse_init(o.init);
  config.loss = o.loss.empty() ? (train_set.k == 1 ? LossKind::kTop1CrossEntropy
                                                   : LossKind::kTopKXeNdcg)
                               : parse_loss(o.loss);

  const auto result = train(train_set, val_set, partitioning, config);
  const auto log_path = path_in(c, kTrainLog);
  write_train_log(result.report, log_path);
  if (result.report.diverged) {
    throw Error("training diverged (non-finite loss) after " +
                std::to_string(result.report.epochs.size()) + " epochs");
  }
  const auto model_prefix = path_in(c, kModelPrefix);
  save_model(result.model, model_prefix);
  load_model(model_prefix);

  KeyValueFile kv;
  kv.set("partition", prefix);
  kv.set("lr", o.lr);
  kv.set("batch_size", std::uint64_t{o.batch_size});
  kv.set("epochs", std::uint64_t{o.epochs});
  kv.set("seed", o.seed);
  kv.set("loss", std::string(to_string(config.loss)));
  kv.set("init", std::string(to_string(config.init)));
  kv.set("best_epoch", std::uint64_t{result.report.best_epoch});
  kv.set("initial_val_loss", result.report.initial_val_loss);
  kv.set("best_val_loss", result.report.best_val_loss);
  kv.set("run_id", result.model.run_id);
  write_manifest(c, "train", kv,
                 {model_prefix + ".fbin", model_prefix + ".header", log_path});
  out << "trained " << result.report.epochs.size() << " epochs; best epoch "
      << result.report.best_epoch << " (val loss " << result.report.initial_val_loss << " -> "
      << result.report.best_val_loss << ")\n";
  return 0;
}

std::vector<ProbeBudget> parse_ells(const std::vector<std::string>& texts,
                                    std::vector<ProbeBudget> fallback, std::size_t L) {
  std::vector<ProbeBudget> ells = std::move(fallback);
  if (!texts.empty()) {
    ells.clear();
    for (const auto& t : texts) ells.push_back(ProbeBudget::parse(t));
  }
  // The saturation row: every sweep ends at ell = L.
  const bool has_full = std::any_of(ells.begin(), ells.end(), [&](const ProbeBudget& b) {
    return b.resolve(L) == L;
  });
  if (!has_full) ells.push_back(ProbeBudget::percent(100));
  std::stable_sort(ells.begin(), ells.end(), [&](const ProbeBudget& a, const ProbeBudget& b) {
    return a.resolve(L) < b.resolve(L);
  });
  return ells;
}

std::vector<ProbeBudget> dense_ell_grid() {
  std::vector<ProbeBudget> g;
  for (double p : {0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0}) {
    g.push_back(ProbeBudget::percent(p));
  }
  return g;
}

int cmd_eval(const CommonOptions& c, const EvalOptions& o, bool dense, std::ostream& out) {
  const std::string command = dense ? "sweep" : "eval";
  const auto data_path = or_default(o.data, path_in(c, kDataFile));
  const auto queries_path = or_default(o.queries, path_in(c, split_queries_file("test")));
  const auto prefix = path_in(c, kPartitionPrefix);
  require_file(data_path, "data file");
  require_file(queries_path, "query file");
  require_file(prefix + ".header", "partitioning");
  const auto collection = load_vectors(data_path, format_for(data_path, c.format));
  const auto queries = load_queries(queries_path, format_for(queries_path, c.format));
  const auto partitioning = load_partitioning(prefix);
  check_same_dim(queries, collection);
  const std::size_t L = partitioning.num_partitions();

  std::vector<NamedModel> models = {{"baseline", baseline_model(partitioning)}};
  const auto model_prefix = or_default(o.model, path_in(c, kModelPrefix));
  if (!o.baseline_only) {
    if (!o.model.empty()) require_file(model_prefix + ".header", "model checkpoint");
    if (fs::exists(model_prefix + ".header")) {
      auto learnt = load_model(model_prefix);
      if (learnt.num_partitions() != L || learnt.dim() != partitioning.dim()) {
        throw InvalidArgument("model shape does not match the partitioning");
      }
      models.push_back({"learnt", std::move(learnt)});
    }
  }

  const auto ells = parse_ells(o.ell, dense ? dense_ell_grid() : default_ell_grid(), L);
  const auto ks = o.k.empty() ? default_k_grid() : o.k;
  const auto report = sweep(queries, collection, partitioning, models, ells, ks);

  fs::create_directories(c.out_dir);
  const auto csv_path = path_in(c, dense ? kSweepCsv : kEvalCsv);
  write_sweep_csv(report, csv_path);
  read_sweep_csv(csv_path);
  std::vector<std::string> outputs = {csv_path};

  out << "model      ell      k   accuracy\n";
  for (const auto& r : report.rows) {
    out << std::left << std::setw(10) << r.model << ' ' << std::setw(8)
        << (std::to_string(r.ell_abs)) << ' ' << std::setw(3) << r.k << ' ' << std::fixed
        << std::setprecision(4) << r.accuracy << '\n';
  }
  out.unsetf(std::ios::fixed);

  KeyValueFile kv;
  kv.set("data", data_path);
  kv.set("queries", queries_path);
  kv.set("partition", prefix);
  kv.set("models", std::to_string(models.size()));
  if (models.size() > 1) kv.set("model", model_prefix);

  if (o.significance) {
    const auto budget = ProbeBudget::parse(o.ell.front());
    std::size_t index = 0;
    while (index < ells.size() && ells[index].resolve(L) != budget.resolve(L)) ++index;
    const auto result = mcnemar(report.top1_hits[0][index], report.top1_hits[1][index]);
    const auto sig_path = path_in(c, kSignificanceFile);
    KeyValueFile sig;
    sig.set("ell", budget.to_string());
    sig.set("ell_abs", std::uint64_t{budget.resolve(L)});
    sig.set("k", std::uint64_t{1});
    sig.set("baseline_only_hits", std::uint64_t{result.b});
    sig.set("learnt_only_hits", std::uint64_t{result.c});
    sig.set("statistic", result.statistic);
    sig.set("p_value", result.p_value);
    sig.save(sig_path);
    outputs.push_back(sig_path);
    out << "McNemar at ell=" << budget.to_string() << ", k=1: b=" << result.b
        << " c=" << result.c << " statistic=" << result.statistic
        << " p=" << result.p_value << '\n';
  }
  write_manifest(c, command, kv, outputs);
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Clustering-based MIPS with learnt partition routing", "ivfrank"};
  app.require_subcommand(1);

  CommonOptions common;
  SynthOptions synth;
  ClusterOptions clus;
  GroundTruthOptions gt;
  TrainOptions tr;
  EvalOptions ev;

  auto* s_synth = app.add_subcommand("synth", "Write a synthetic Gaussian-mixture dataset");
  add_common(s_synth, common);
  s_synth->add_option("--m", synth.m, "Collection size")->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_synth->add_option("--d", synth.d, "Dimension")->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_synth->add_option("--centers", synth.centers, "Mixture components")
      ->check(CLI::PositiveNumber)->capture_default_str();
  s_synth->add_option("--spread", synth.spread, "Component standard deviation")
      ->check(CLI::NonNegativeNumber)->capture_default_str();
  s_synth->add_option("--n-queries", synth.n_queries, "Query count")
      ->check(CLI::PositiveNumber)->capture_default_str();
  s_synth->add_option("--seed", synth.seed, "Mixture and collection seed")->capture_default_str();
  s_synth->add_option("--query-seed", synth.query_seed, "Query sampling seed")
      ->capture_default_str();

  auto* s_cluster = app.add_subcommand("cluster", "Partition the collection");
  add_common(s_cluster, common);
  s_cluster->add_option("--data", clus.data, "Collection file (default <out-dir>/data.fbin)");
  s_cluster->add_option("--algo", clus.algo, "Clustering algorithm")
      ->check(CLI::IsMember({"standard", "spherical", "shallow"}))->capture_default_str();
  s_cluster->add_option("--clusters", clus.clusters, "Partition count L (default round(sqrt(m)))")
      ->check(CLI::PositiveNumber);
  s_cluster->add_option("--max-iters", clus.max_iters, "Lloyd iteration cap")
      ->check(CLI::PositiveNumber)->capture_default_str();
  s_cluster->add_option("--seed", clus.seed, "Clustering seed")->capture_default_str();

  auto* s_gt = app.add_subcommand("ground-truth", "Split queries and build partition labels");
  add_common(s_gt, common);
  s_gt->add_option("--data", gt.data, "Collection file (default <out-dir>/data.fbin)");
  s_gt->add_option("--queries", gt.queries, "Query file (default <out-dir>/queries.fbin)");
  s_gt->add_option("--k", gt.k, "Neighbours per label")->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_gt->add_option("--seed", gt.seed, "Split seed")->capture_default_str();

  auto* s_train = app.add_subcommand("train", "Learn the routing function");
  add_common(s_train, common);
  s_train->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::PositiveNumber)
      ->capture_default_str();
  s_train->add_option("--batch-size", tr.batch_size, "Mini-batch size")
      ->check(CLI::PositiveNumber)->capture_default_str();
  s_train->add_option("--epochs", tr.epochs, "Maximum epochs")->capture_default_str();
  s_train->add_option("--seed", tr.seed, "Shuffle and noise seed")->capture_default_str();
  s_train->add_option("--loss", tr.loss, "top1_ce or topk_xendcg (default from label k)")
      ->check(CLI::IsMember({"top1_ce", "topk_xendcg"}));
  s_train->add_option("--init", tr.init, "Initial weights")
      ->check(CLI::IsMember({"from_partitioning", "zeros", "random"}))->capture_default_str();

  auto add_eval = [&](CLI::App* sub) {
    add_common(sub, common);
    sub->add_option("--data", ev.data, "Collection file (default <out-dir>/data.fbin)");
    sub->add_option("--queries", ev.queries,
                    "Evaluation queries (default <out-dir>/queries.test.fbin)");
    sub->add_option("--model", ev.model, "Learnt checkpoint prefix (default <out-dir>/model.learnt)");
    sub->add_flag("--baseline-only", ev.baseline_only, "Skip the learnt model");
    sub->add_option("--ell", ev.ell, "Probe budgets, absolute or N%")->delimiter(',');
    sub->add_option("--k", ev.k, "Neighbour counts")->delimiter(',')->check(CLI::PositiveNumber);
    sub->add_flag("--significance", ev.significance,
                  "McNemar test of baseline vs learnt top-1 hits at the single --ell");
  };
  auto* s_eval = app.add_subcommand("eval", "Accuracy at the default probe budgets");
  add_eval(s_eval);
  auto* s_sweep = app.add_subcommand("sweep", "Accuracy over a dense probe-budget grid");
  add_eval(s_sweep);

  std::vector<const char*> argv = {"ivfrank"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
    if (ev.significance && ev.ell.size() != 1) {
      throw CLI::ValidationError("--significance", "requires exactly one --ell value");
    }
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (common.threads > 0) set_num_threads(common.threads);
    int code = 0;
    if (s_synth->parsed()) code = cmd_synth(common, synth, out);
    if (s_cluster->parsed()) code = cmd_cluster(common, clus, out);
    if (s_gt->parsed()) code = cmd_ground_truth(common, gt, out);
    if (s_train->parsed()) code = cmd_train(common, tr, out);
    if (s_eval->parsed() || s_sweep->parsed()) {
      if (ev.significance && !ev.baseline_only) {
        const auto prefix = or_default(ev.model, path_in(common, kModelPrefix));
        require_file(prefix + ".header", "model checkpoint for --significance");
      } else if (ev.significance) {
        throw InvalidArgument("--significance needs a learnt model");
      }
      code = cmd_eval(common, ev, s_sweep->parsed(), out);
    }
    set_num_threads(0);
    return code;
  } catch (const std::exception& e) {
    set_num_threads(0);
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace ivfrank::cli
