#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cnpadv/cnp.hpp"
#include "cnpadv/config.hpp"
#include "cnpadv/datasets.hpp"
#include "cnpadv/ebm.hpp"
#include "cnpadv/nn.hpp"

namespace cnpadv::train {

enum class UpdateSide { UpdateCnp, UpdateEbm };
enum class AlphaDecision { CurrentBatch, NextBatch };

std::string to_string(UpdateSide side);

struct TrainConfig {
  int epochs_stage1 = 200;
  int epochs_stage2 = 200;
  int batch_size = 16;
  double frac_lo = 0.04;
  double frac_hi = 0.2;
  double alpha = 0.6;   // EBM-accuracy threshold for the alternation
  double beta = 0.1;    // trade-off in (1-beta)*l1 + beta*l2
  double lr_stage1 = 1e-3;
  double lr_stage2_cnp = 7e-4;
  double lr_stage2_ebm = 7e-4;
  double weight_decay = 6e-5;
  int patience = 20;
  std::uint64_t seed = 0;
  model::SampleMode fake_mode = model::SampleMode::ReparamSample;
  int noise_ratio = 1;  // fake sample sets per batch (1..K)
  AlphaDecision alpha_decision = AlphaDecision::CurrentBatch;

  void validate() const;
};

/// Reads every TrainConfig field from flat key=value entries (missing keys
/// keep defaults). Key names match the field names.
TrainConfig train_config_from_kv(KvConfig& kv);
void train_config_to_kv(const TrainConfig& cfg, KvConfig& kv);

/// accuracy > alpha -> the CNP updates next; otherwise the EBM does.
/// Accuracy equal to alpha goes to the EBM ("greater than" is strict).
UpdateSide select_update_side(double ebm_accuracy, double alpha);

/// (1 - beta) * l1 + beta * l2.
double combined_loss(double l1, double l2, double beta);

struct BatchRecord {
  int stage = 1;
  int epoch = 0;
  int batch = 0;
  double l1 = 0.0;
  std::optional<double> l2;
  double combined = 0.0;
  std::optional<double> ebm_acc;
  std::optional<UpdateSide> side;
};

struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  double val_l1 = 0.0;
  bool improved = false;
  double seconds = 0.0;
};

struct History {
  std::vector<BatchRecord> batches;
  std::vector<EpochRecord> epochs;
  bool aborted = false;
  std::string abort_reason;
};

struct StageResult {
  History history;
  double best_val = 0.0;
  int best_epoch = -1;
  int epochs_run = 0;
};

/// Batch-stepped training loop covering both stages. Stage 1 minimizes the
/// stage-1 loss with Adam; stage 2 alternates CNP/EBM updates gated by the
/// EBM accuracy threshold. Validation runs after every epoch on a fixed
/// episode set at the upper context fraction; early stopping restores
/// nothing by itself - call restore_best() when training is finished.
/// The full state (parameters, both optimizers, RNG, cursor) round-trips
/// through save_checkpoint()/load_checkpoint() so a resumed run reproduces
/// the unbroken one bit for bit.
class Trainer {
 public:
  Trainer(int stage, model::CnpModel& model, ebm::EbmModel* ebm,
          const data::MetaDataset& train_split, const data::MetaDataset& val_split,
          TrainConfig cfg);

  /// Advances one batch; returns false once training is done (early stop,
  /// NaN abort in stage 1) - stage budget is enforced by run().
  bool step_batch();

  /// Runs until early stop or the epoch budget (stage default when < 0).
  StageResult run(int max_epochs = -1);

  void restore_best();

  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

  const History& history() const { return history_; }
  int epoch() const { return epoch_; }
  double best_val() const { return best_val_; }
  int best_epoch() const { return best_epoch_; }
  bool done() const { return done_; }
  int batches_per_epoch() const;

 private:
  void ensure_epoch_started();
  void end_of_epoch(double epoch_seconds);
  void train_batch_stage1(const data::EpisodeBatch& episode);
  void train_batch_stage2(const data::EpisodeBatch& episode);
  double validation_l1();
  void snapshot_best();

  int stage_;
  model::CnpModel& model_;
  ebm::EbmModel* ebm_;
  const data::MetaDataset& train_;
  const data::MetaDataset& val_;
  TrainConfig cfg_;
  Rng rng_;
  diff::AdamState opt_cnp_;
  diff::AdamState opt_ebm_;
  std::vector<data::EpisodeBatch> val_episodes_;

  int epoch_ = 0;
  int cursor_ = -1;  // batch index within the running epoch; -1 = not started
  std::vector<int> order_;
  double epoch_clock_ = 0.0;
  double best_val_ = 0.0;
  int best_epoch_ = -1;
  int bad_epochs_ = 0;
  bool done_ = false;
  bool have_best_ = false;
  std::vector<diff::Tensor> best_cnp_;
  std::vector<diff::Tensor> best_ebm_;
  std::optional<UpdateSide> pending_side_;
  History history_;
};

/// Stage-1 convenience: trains to completion and leaves the best-validation
/// parameters applied to the model.
StageResult train_stage1(model::CnpModel& model, const data::MetaDataset& train_split,
                         const data::MetaDataset& val_split, const TrainConfig& cfg);

/// Stage-2 convenience: adversarial calibration from a stage-1 model; leaves
/// best-validation parameters applied to model and ebm.
StageResult train_stage2(model::CnpModel& model, ebm::EbmModel& ebm,
                         const data::MetaDataset& train_split,
                         const data::MetaDataset& val_split, const TrainConfig& cfg);

}  // namespace cnpadv::train
