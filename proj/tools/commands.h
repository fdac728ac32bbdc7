#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace ivfrank::cli {

// Artifact names inside --out-dir. Every command reads its inputs from and
// writes its outputs to this directory unless a path flag overrides it.
inline constexpr const char* kDataFile = "data.fbin";
inline constexpr const char* kQueriesFile = "queries.fbin";
inline constexpr const char* kPartitionPrefix = "partition";
inline constexpr const char* kModelPrefix = "model.learnt";
inline constexpr const char* kTrainLog = "train_log.csv";
inline constexpr const char* kEvalCsv = "eval.csv";
inline constexpr const char* kSweepCsv = "sweep.csv";
inline constexpr const char* kSignificanceFile = "significance.txt";
inline constexpr const char* kSplitFile = "split.csv";

std::string split_queries_file(const std::string& split);  // queries.<split>.fbin
std::string split_labels_file(const std::string& split);   // labels.<split>.bin
std::string manifest_file(const std::string& command);     // <command>.manifest

/// Parses and runs one subcommand. Returns the process exit code: 0 when all
/// outputs were written and validated, 1 on runtime errors, CLI11's code on
/// usage errors.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace ivfrank::cli
