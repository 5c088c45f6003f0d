#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cnpadv/cnp.hpp"
#include "cnpadv/config.hpp"
#include "cnpadv/datasets.hpp"
#include "cnpadv/ebm.hpp"
#include "cnpadv/training.hpp"

namespace cnpadv::exp {

struct DatasetSpec {
  std::string family = "sine";  // sine | oscillator | gp-rbf
  int n_train = 500;
  int n_val = 500;
  int n_test = 500;
  int n_points = 100;
  double gp_sigma = 0.2;
  std::uint64_t data_seed = 1234;
};

struct ExperimentSpec {
  std::string id = "experiment";
  DatasetSpec data;
  model::Variant variant = model::Variant::Cnp;
  bool adversarial = true;
  bool ebm_include_x = false;
  train::TrainConfig tc;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_dir = "out";

  std::string canonical() const;
  std::string hash() const;
};

/// Parses a full experiment spec from flat key=value config; unknown keys
/// are rejected.
ExperimentSpec spec_from_kv(KvConfig& kv);

/// Architectures per dataset family (encoder/decoder widths and conditioning
/// paths as used for the 1D studies).
model::ModelConfig make_model_config(const std::string& family, model::Variant variant);
ebm::EbmConfig make_ebm_config(const std::string& family, bool include_x);

struct Splits {
  data::MetaDataset train, val, test;
};

/// Generates the three splits and normalizes all of them with statistics
/// computed from the train split only.
Splits build_splits(const DatasetSpec& spec);

/// Test MSE between the predictive mean and the ground truth over all target
/// points (normalized observation space), contexts pinned to `fraction`.
double eval_test_mse(const model::CnpModel& model, const data::MetaDataset& test,
                     double fraction, std::uint64_t seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  double mse_stage1 = 0.0;
  std::optional<double> mse_stage2;
  int stage1_epochs = 0;
  int stage2_epochs = 0;
  std::string ckpt_stage1;
  std::string ckpt_stage2;
  bool failed = false;
  std::string error;
};

struct ExperimentResult {
  std::string run_dir;
  std::vector<SeedOutcome> seeds;
  int exit_code = 0;
};

/// Per seed: train stage 1, optionally stage 2, evaluate, and write per-seed
/// and aggregate CSVs plus a JSON manifest under a fresh run-NNN directory.
/// Sub-stage failures produce a partial manifest and a nonzero exit code.
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct BetaOutcome {
  double beta = 0.0;
  std::uint64_t seed = 0;
  double mse = 0.0;
  bool failed = false;
  std::string error;
};

struct BetaSweepResult {
  std::string run_dir;
  std::vector<BetaOutcome> rows;
  int exit_code = 0;
};

/// One stage-2 run per (beta, seed) from a shared per-seed stage-1 model.
BetaSweepResult run_beta_sweep(const ExperimentSpec& spec, const std::vector<double>& betas);

struct OverheadReport {
  std::vector<double> stage1_epoch_seconds;
  std::vector<double> stage2_epoch_seconds;
  double stage1_median = 0.0;
  double stage2_median = 0.0;
  double ratio = 0.0;
};

/// Median wall-clock seconds per epoch for plain and adversarial training on
/// identical data, and their ratio (>= 5 epochs each).
OverheadReport run_overhead_bench(const ExperimentSpec& spec, int epochs);

/// <prefix>_batches.csv / <prefix>_epochs.csv under `dir`.
void write_history_csv(const std::string& dir, const train::History& history,
                       const std::string& spec_hash_value,
                       const std::string& prefix = "train");

/// Creates out_dir/id/run-NNN with the next free index.
std::string make_run_dir(const std::string& out_dir, const std::string& id);

}  // namespace cnpadv::exp
