#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "ninformer/data.hpp"
#include "ninformer/training.hpp"
#include "ninformer_cli/run_config.hpp"

namespace ninformer::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitVerificationFailure = 1,
  kExitUsage = 2,
  kExitNumericAbort = 3,
};

// Entry point shared by the executable and the tests. `args` excludes the
// program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct PreparedData {
  LabeledDataset train;
  LabeledDataset test;
};

// Loads both splits, trims the training split to cfg.train_subset and
// normalizes with cfg.normalization, computing and storing the training-split
// statistics first if the config has none.
PreparedData prepare_data(RunConfig& cfg, const std::filesystem::path& data_dir, bool require_canonical_count);

// Trains per `cfg` and writes metrics.csv, metrics.jsonl, step_losses.csv,
// model.ckpt and resolved-config.json into `out_dir`.
TrainResult train_run(RunConfig cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
                      bool require_canonical_count, std::ostream& log);

}  // namespace ninformer::cli
