#include "cnpadv/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cnpadv/errors.hpp"

namespace cnpadv::train {

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

}  // namespace

std::string to_string(UpdateSide side) {
  return side == UpdateSide::UpdateCnp ? "CNP" : "EBM";
}

void TrainConfig::validate() const {
  if (epochs_stage1 < 1 || epochs_stage2 < 0) throw ConfigError("epoch budgets invalid");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(frac_lo > 0.0 && frac_lo <= frac_hi && frac_hi <= 1.0)) {
    throw ConfigError("context fraction range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must be in (0,1)");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must be in [0,1]");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (noise_ratio < 1) throw ConfigError("noise_ratio must be >= 1");
}

TrainConfig train_config_from_kv(KvConfig& kv) {
  TrainConfig cfg;
  cfg.epochs_stage1 = kv.get_int("epochs_stage1", cfg.epochs_stage1);
  cfg.epochs_stage2 = kv.get_int("epochs_stage2", cfg.epochs_stage2);
  cfg.batch_size = kv.get_int("batch_size", cfg.batch_size);
  cfg.frac_lo = kv.get_double("frac_lo", cfg.frac_lo);
  cfg.frac_hi = kv.get_double("frac_hi", cfg.frac_hi);
  cfg.alpha = kv.get_double("alpha", cfg.alpha);
  cfg.beta = kv.get_double("beta", cfg.beta);
  cfg.lr_stage1 = kv.get_double("lr_stage1", cfg.lr_stage1);
  cfg.lr_stage2_cnp = kv.get_double("lr_stage2_cnp", cfg.lr_stage2_cnp);
  cfg.lr_stage2_ebm = kv.get_double("lr_stage2_ebm", cfg.lr_stage2_ebm);
  cfg.weight_decay = kv.get_double("weight_decay", cfg.weight_decay);
  cfg.patience = kv.get_int("patience", cfg.patience);
  cfg.seed = kv.get_u64("seed", cfg.seed);
  const std::string mode = kv.get_string("fake_mode", "reparam-sample");
  if (mode == "reparam-sample") {
    cfg.fake_mode = model::SampleMode::ReparamSample;
  } else if (mode == "mean") {
    cfg.fake_mode = model::SampleMode::Mean;
  } else {
    throw ConfigError("fake_mode must be reparam-sample or mean, got " + mode);
  }
  cfg.noise_ratio = kv.get_int("noise_ratio", cfg.noise_ratio);
  const std::string decision = kv.get_string("alpha_decision", "current");
  if (decision == "current") {
    cfg.alpha_decision = AlphaDecision::CurrentBatch;
  } else if (decision == "next") {
    cfg.alpha_decision = AlphaDecision::NextBatch;
  } else {
    throw ConfigError("alpha_decision must be current or next, got " + decision);
  }
  cfg.validate();
  return cfg;
}

void train_config_to_kv(const TrainConfig& cfg, KvConfig& kv) {
  kv.set("epochs_stage1", std::to_string(cfg.epochs_stage1));
  kv.set("epochs_stage2", std::to_string(cfg.epochs_stage2));
  kv.set("batch_size", std::to_string(cfg.batch_size));
  kv.set("frac_lo", diff::format_double(cfg.frac_lo));
  kv.set("frac_hi", diff::format_double(cfg.frac_hi));
  kv.set("alpha", diff::format_double(cfg.alpha));
  kv.set("beta", diff::format_double(cfg.beta));
  kv.set("lr_stage1", diff::format_double(cfg.lr_stage1));
  kv.set("lr_stage2_cnp", diff::format_double(cfg.lr_stage2_cnp));
  kv.set("lr_stage2_ebm", diff::format_double(cfg.lr_stage2_ebm));
  kv.set("weight_decay", diff::format_double(cfg.weight_decay));
  kv.set("patience", std::to_string(cfg.patience));
  kv.set("seed", std::to_string(cfg.seed));
  kv.set("fake_mode",
         cfg.fake_mode == model::SampleMode::ReparamSample ? "reparam-sample" : "mean");
  kv.set("noise_ratio", std::to_string(cfg.noise_ratio));
  kv.set("alpha_decision",
         cfg.alpha_decision == AlphaDecision::CurrentBatch ? "current" : "next");
}

UpdateSide select_update_side(double ebm_accuracy, double alpha) {
  return ebm_accuracy > alpha ? UpdateSide::UpdateCnp : UpdateSide::UpdateEbm;
}

double combined_loss(double l1, double l2, double beta) {
  return (1.0 - beta) * l1 + beta * l2;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(int stage, model::CnpModel& model, ebm::EbmModel* ebm,
                 const data::MetaDataset& train_split, const data::MetaDataset& val_split,
                 TrainConfig cfg)
    : stage_(stage),
      model_(model),
      ebm_(ebm),
      train_(train_split),
      val_(val_split),
      cfg_(cfg),
      rng_(cfg.seed + (stage == 2 ? 0x5747414745320000ull : 0ull)),
      best_val_(std::numeric_limits<double>::infinity()) {
  cfg_.validate();
  if (stage_ != 1 && stage_ != 2) throw UsageError("trainer stage must be 1 or 2");
  if (stage_ == 2 && !ebm_) throw UsageError("stage 2 requires an EBM");
  if (train_.size() < cfg_.batch_size) {
    throw ConfigError("batch_size exceeds train split size");
  }
  diff::AdamConfig ocnp{stage_ == 1 ? cfg_.lr_stage1 : cfg_.lr_stage2_cnp, 0.9, 0.999, 1e-8,
                        cfg_.weight_decay};
  opt_cnp_ = diff::AdamState(model_.params().all(), ocnp);
  if (ebm_) {
    diff::AdamConfig oebm{cfg_.lr_stage2_ebm, 0.9, 0.999, 1e-8, cfg_.weight_decay};
    opt_ebm_ = diff::AdamState(ebm_->params().all(), oebm);
  }
  // Fixed validation episodes: all validation instances at the upper context
  // fraction, drawn once from a dedicated stream.
  Rng val_rng(cfg_.seed ^ 0x76616c6964ull);
  const int k = cfg_.batch_size;
  std::vector<int> ids(static_cast<std::size_t>(val_.size()));
  for (int i = 0; i < val_.size(); ++i) ids[static_cast<std::size_t>(i)] = i;
  for (int start = 0; start + k <= val_.size(); start += k) {
    val_episodes_.push_back(data::make_episode_for(
        val_, std::span<const int>(ids.data() + start, static_cast<std::size_t>(k)),
        cfg_.frac_hi, cfg_.frac_hi, val_rng));
  }
  if (val_episodes_.empty()) {
    val_episodes_.push_back(data::make_episode_for(
        val_, std::span<const int>(ids.data(), ids.size()), cfg_.frac_hi, cfg_.frac_hi,
        val_rng));
  }
  // The incoming parameters are the initial best snapshot: a stage that never
  // improves validation hands back exactly the model it was given.
  best_val_ = validation_l1();
  snapshot_best();
}

int Trainer::batches_per_epoch() const { return train_.size() / cfg_.batch_size; }

void Trainer::ensure_epoch_started() {
  if (cursor_ >= 0) return;
  order_.resize(static_cast<std::size_t>(train_.size()));
  for (int i = 0; i < train_.size(); ++i) order_[static_cast<std::size_t>(i)] = i;
  rng_.shuffle(order_);
  cursor_ = 0;
  epoch_clock_ = now_seconds();
}

bool Trainer::step_batch() {
  if (done_) return false;
  ensure_epoch_started();
  const int k = cfg_.batch_size;
  const std::span<const int> ids(order_.data() + static_cast<std::size_t>(cursor_) * k,
                                 static_cast<std::size_t>(k));
  const data::EpisodeBatch episode =
      data::make_episode_for(train_, ids, cfg_.frac_lo, cfg_.frac_hi, rng_);
  if (stage_ == 1) {
    train_batch_stage1(episode);
  } else {
    train_batch_stage2(episode);
  }
  if (done_) return false;
  ++cursor_;
  if (cursor_ >= batches_per_epoch()) {
    end_of_epoch(now_seconds() - epoch_clock_);
  }
  return !done_;
}

void Trainer::train_batch_stage1(const data::EpisodeBatch& episode) {
  const data::EpisodeTensors et = data::gather(train_, episode);
  diff::Graph g;
  const auto fwd = model_.build_forward(g, et);
  const auto l1 = model_.mle_loss_from(g, fwd);
  auto total = l1;
  if (model_.config().variant == model::Variant::Ccnp) {
    total = g.add(l1, g.scale(model_.contrastive_loss(g, et, rng_),
                              model_.config().lambda_contrastive));
  }
  const double loss = g.forward(total);
  if (!std::isfinite(loss)) {
    // Abort with the last good checkpoint applied.
    if (have_best_) restore_best();
    history_.aborted = true;
    history_.abort_reason = "stage-1 loss non-finite at epoch " + std::to_string(epoch_) +
                            " batch " + std::to_string(cursor_);
    done_ = true;
    return;
  }
  g.backward(total);
  opt_cnp_.step();

  BatchRecord rec;
  rec.stage = 1;
  rec.epoch = epoch_;
  rec.batch = cursor_;
  rec.l1 = g.value(l1)[0];
  rec.combined = loss;
  rec.side = UpdateSide::UpdateCnp;
  history_.batches.push_back(rec);
}

void Trainer::train_batch_stage2(const data::EpisodeBatch& episode) {
  const data::EpisodeTensors et = data::gather(train_, episode);
  const auto& mcfg = model_.config();
  const int n_fake_rows = et.k * et.t;
  const int d_y = mcfg.d_y;

  diff::Graph g;
  const auto fwd = model_.build_forward(g, et);
  const auto lp_true_theta = model_.log_prob(g, fwd.dist, fwd.yt);
  const auto l1 = g.neg(g.mean_all(lp_true_theta));

  // Fake observations: noise_ratio independent sample sets per batch.
  const int nu = std::min(cfg_.noise_ratio, et.k);
  std::vector<diff::Graph::NodeId> fakes;
  for (int v = 0; v < nu; ++v) {
    diff::Graph::NodeId yhat;
    if (mcfg.likelihood == model::Likelihood::Gaussian) {
      if (cfg_.fake_mode == model::SampleMode::ReparamSample) {
        diff::Tensor eps = diff::Tensor::zeros(n_fake_rows, d_y);
        for (std::int64_t i = 0; i < eps.size(); ++i) eps[i] = rng_.normal();
        yhat = g.add(fwd.dist.mu, g.mul(fwd.dist.sigma, g.constant(std::move(eps))));
      } else {
        yhat = fwd.dist.mu;
      }
    } else {
      // Bernoulli: mean mode keeps gradients through p; sampling draws hard
      // outcomes with no gradient path.
      if (cfg_.fake_mode == model::SampleMode::ReparamSample) {
        diff::Tensor draws = g.value(fwd.dist.logits);
        for (std::int64_t i = 0; i < draws.size(); ++i) {
          const double p = diff::stable_sigmoid(draws[i]);
          draws[i] = rng_.uniform() < p ? 1.0 : 0.0;
        }
        yhat = g.constant(std::move(draws));
      } else {
        yhat = g.sigmoid(fwd.dist.logits);
      }
    }
    fakes.push_back(yhat);
  }

  const auto lp_true_ebm = ebm_->log_prob(g, fwd.yt, fwd.xt);
  std::vector<diff::Graph::NodeId> lp_fake_theta, lp_fake_ebm;
  for (const auto yhat : fakes) {
    lp_fake_theta.push_back(model_.log_prob(g, fwd.dist, yhat));
    lp_fake_ebm.push_back(ebm_->log_prob(g, yhat, fwd.xt));
  }

  // NCE value (the quantity the EBM ascends), assembled over all fake sets:
  // mean log-posterior over true points + mean log(1-posterior) over fakes
  // - log(K) / (total summed terms).
  const auto dt = g.sub(lp_true_ebm, lp_true_theta);
  auto term_true = g.mean_all(g.neg(g.softplus(g.neg(dt))));
  diff::Graph::NodeId term_fake = -1;
  for (int v = 0; v < nu; ++v) {
    const auto df = g.sub(lp_fake_ebm[static_cast<std::size_t>(v)],
                          lp_fake_theta[static_cast<std::size_t>(v)]);
    const auto tf = g.mean_all(g.neg(g.softplus(df)));
    term_fake = v == 0 ? tf : g.add(term_fake, tf);
  }
  if (nu > 1) term_fake = g.scale(term_fake, 1.0 / nu);
  const double nce_const =
      -std::log(static_cast<double>(et.k)) /
      static_cast<double>(n_fake_rows + static_cast<std::int64_t>(nu) * n_fake_rows);
  const auto l2 = g.add_scalar(g.add(term_true, term_fake), nce_const);

  const auto combined = g.add(g.scale(l1, 1.0 - cfg_.beta), g.scale(l2, cfg_.beta));
  const auto ebm_loss = g.neg(l2);

  const double l1_val = g.forward(l1);
  const double l2_val = g.forward(l2);
  const double combined_val = g.forward(combined);

  // Accuracy of the density-ratio classifier on this batch.
  diff::Tensor q_true = ebm::posteriors(g.value(lp_true_ebm), g.value(lp_true_theta));
  std::int64_t n_fake_total = 0;
  for (int v = 0; v < nu; ++v) n_fake_total += g.value(lp_fake_ebm[static_cast<std::size_t>(v)]).size();
  diff::Tensor q_fake = diff::Tensor::zeros(static_cast<int>(n_fake_total), 1);
  std::int64_t at = 0;
  for (int v = 0; v < nu; ++v) {
    const diff::Tensor q = ebm::posteriors(g.value(lp_fake_ebm[static_cast<std::size_t>(v)]),
                                     g.value(lp_fake_theta[static_cast<std::size_t>(v)]));
    for (std::int64_t i = 0; i < q.size(); ++i) q_fake[at++] = q[i];
  }
  const double acc = ebm::discriminator_accuracy(q_true, q_fake);

  if (!std::isfinite(l1_val) || !std::isfinite(l2_val)) {
    throw TrainError("stage-2 loss non-finite (l1=" + std::to_string(l1_val) +
                     ", l2=" + std::to_string(l2_val) + ") at epoch " +
                     std::to_string(epoch_) + " batch " + std::to_string(cursor_));
  }

  UpdateSide side;
  if (cfg_.alpha_decision == AlphaDecision::CurrentBatch || !pending_side_) {
    side = select_update_side(acc, cfg_.alpha);
  } else {
    side = *pending_side_;
  }
  pending_side_ = select_update_side(acc, cfg_.alpha);

  if (side == UpdateSide::UpdateCnp) {
    g.forward(combined);
    g.backward(combined);
    opt_cnp_.step();
  } else {
    g.forward(ebm_loss);
    g.backward(ebm_loss);
    opt_ebm_.step();
  }

  BatchRecord rec;
  rec.stage = 2;
  rec.epoch = epoch_;
  rec.batch = cursor_;
  rec.l1 = l1_val;
  rec.l2 = l2_val;
  rec.combined = combined_val;
  rec.ebm_acc = acc;
  rec.side = side;
  history_.batches.push_back(rec);
}

double Trainer::validation_l1() {
  double total = 0.0;
  std::int64_t count = 0;
  for (const auto& episode : val_episodes_) {
    const data::EpisodeTensors et = data::gather(val_, episode);
    diff::Graph g;
    const auto loss = model_.mle_loss(g, et);
    total += g.forward(loss) * static_cast<double>(et.k) * et.t;
    count += static_cast<std::int64_t>(et.k) * et.t;
  }
  return total / static_cast<double>(count);
}

void Trainer::snapshot_best() {
  best_cnp_ = diff::snapshot_values(model_.params());
  if (ebm_) best_ebm_ = diff::snapshot_values(ebm_->params());
  have_best_ = true;
}

void Trainer::restore_best() {
  if (!have_best_) return;
  diff::restore_values(model_.params(), best_cnp_);
  if (ebm_ && !best_ebm_.empty()) diff::restore_values(ebm_->params(), best_ebm_);
}

void Trainer::end_of_epoch(double epoch_seconds) {
  const double val = validation_l1();
  EpochRecord rec;
  rec.stage = stage_;
  rec.epoch = epoch_;
  rec.val_l1 = val;
  rec.seconds = epoch_seconds;
  if (val < best_val_) {
    best_val_ = val;
    best_epoch_ = epoch_;
    bad_epochs_ = 0;
    rec.improved = true;
    snapshot_best();
  } else {
    ++bad_epochs_;
  }
  history_.epochs.push_back(rec);
  ++epoch_;
  cursor_ = -1;
  if (bad_epochs_ >= cfg_.patience) done_ = true;
}

StageResult Trainer::run(int max_epochs) {
  const int budget = max_epochs >= 0
                         ? max_epochs
                         : (stage_ == 1 ? cfg_.epochs_stage1 : cfg_.epochs_stage2);
  while (!done_ && epoch_ < budget) {
    step_batch();
  }
  StageResult result;
  result.history = history_;
  result.best_val = best_val_;
  result.best_epoch = best_epoch_;
  result.epochs_run = epoch_;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {

void write_tensor_block(std::ostream& os, const std::vector<diff::Tensor>& tensors) {
  os << tensors.size() << "\n";
  for (const auto& t : tensors) {
    os << t.shape().size();
    for (int d : t.shape()) os << " " << d;
    os << "\n";
    for (std::int64_t i = 0; i < t.size(); ++i) {
      os << diff::format_double(t[i]) << (i + 1 == t.size() ? "\n" : " ");
    }
  }
}

std::vector<diff::Tensor> read_tensor_block(std::istream& is) {
  std::size_t count = 0;
  is >> count;
  std::vector<diff::Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t rank = 0;
    is >> rank;
    std::vector<int> shape(rank);
    for (auto& d : shape) is >> d;
    diff::Tensor t(shape);
    for (std::int64_t j = 0; j < t.size(); ++j) is >> t[j];
    out.push_back(std::move(t));
  }
  if (is.fail()) throw CheckpointError("corrupt tensor block");
  return out;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw CheckpointError("cannot write checkpoint: " + path);
  os << "cnpadv-train-checkpoint v1\n";
  os << "stage " << stage_ << "\n";
  KvConfig kv;
  train_config_to_kv(cfg_, kv);
  const std::string canon = kv.canonical();
  os << "config_lines " << std::count(canon.begin(), canon.end(), '\n') << "\n" << canon;
  os << "epoch " << epoch_ << "\n";
  os << "cursor " << cursor_ << "\n";
  os << "bad_epochs " << bad_epochs_ << "\n";
  os << "best_epoch " << best_epoch_ << "\n";
  os << "best_val " << diff::format_double(best_val_) << "\n";
  os << "done " << (done_ ? 1 : 0) << "\n";
  os << "have_best " << (have_best_ ? 1 : 0) << "\n";
  os << "pending "
     << (pending_side_ ? (*pending_side_ == UpdateSide::UpdateCnp ? "CNP" : "EBM") : "none")
     << "\n";
  os << "rng " << rng_.serialize() << "\n";
  os << "order " << order_.size();
  for (int id : order_) os << " " << id;
  os << "\n";
  diff::save_params(os, model_.params());
  opt_cnp_.save(os);
  os << "ebm " << (ebm_ ? 1 : 0) << "\n";
  if (ebm_) {
    diff::save_params(os, ebm_->params());
    opt_ebm_.save(os);
  }
  write_tensor_block(os, best_cnp_);
  write_tensor_block(os, best_ebm_);
  if (!os) throw CheckpointError("write failed for checkpoint: " + path);
}

void Trainer::load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot read checkpoint: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "cnpadv-train-checkpoint v1") {
    throw CheckpointError("bad checkpoint header (version mismatch?): " + line);
  }
  std::string tag;
  int stage = 0;
  is >> tag >> stage;
  if (stage != stage_) {
    throw CheckpointError("checkpoint stage " + std::to_string(stage) +
                          " does not match trainer stage " + std::to_string(stage_));
  }
  std::size_t config_lines = 0;
  is >> tag >> config_lines;
  std::getline(is, line);  // eol
  std::string config_text;
  for (std::size_t i = 0; i < config_lines; ++i) {
    std::getline(is, line);
    config_text += line + "\n";
  }
  KvConfig mine;
  train_config_to_kv(cfg_, mine);
  if (config_text != mine.canonical()) {
    throw CheckpointError("checkpoint config does not match the trainer config");
  }
  int done = 0, have_best = 0;
  std::string pending;
  is >> tag >> epoch_;
  is >> tag >> cursor_;
  is >> tag >> bad_epochs_;
  is >> tag >> best_epoch_;
  is >> tag >> best_val_;
  is >> tag >> done;
  is >> tag >> have_best;
  is >> tag >> pending;
  done_ = done != 0;
  have_best_ = have_best != 0;
  if (pending == "none") {
    pending_side_.reset();
  } else {
    pending_side_ = pending == "CNP" ? UpdateSide::UpdateCnp : UpdateSide::UpdateEbm;
  }
  is >> tag;  // "rng"
  std::getline(is, line);
  rng_.restore(line.substr(1));  // skip the separating space
  std::size_t order_size = 0;
  is >> tag >> order_size;
  order_.resize(order_size);
  for (auto& id : order_) is >> id;
  std::getline(is, line);  // eol
  diff::load_params(is, model_.params());
  opt_cnp_.load(is);
  int has_ebm = 0;
  is >> tag >> has_ebm;
  if ((has_ebm != 0) != (ebm_ != nullptr)) {
    throw CheckpointError("checkpoint EBM presence does not match trainer");
  }
  if (ebm_) {
    std::getline(is, line);  // eol
    diff::load_params(is, ebm_->params());
    opt_ebm_.load(is);
  }
  best_cnp_ = read_tensor_block(is);
  best_ebm_ = read_tensor_block(is);
  if (is.fail()) throw CheckpointError("corrupt checkpoint: " + path);
  // A resumed mid-epoch run restarts its epoch timer.
  if (cursor_ >= 0) epoch_clock_ = now_seconds();
}

// ---------------------------------------------------------------------------
// Stage wrappers

StageResult train_stage1(model::CnpModel& model, const data::MetaDataset& train_split,
                         const data::MetaDataset& val_split, const TrainConfig& cfg) {
  Trainer trainer(1, model, nullptr, train_split, val_split, cfg);
  StageResult result = trainer.run();
  trainer.restore_best();
  return result;
}

StageResult train_stage2(model::CnpModel& model, ebm::EbmModel& ebm,
                         const data::MetaDataset& train_split,
                         const data::MetaDataset& val_split, const TrainConfig& cfg) {
  Trainer trainer(2, model, &ebm, train_split, val_split, cfg);
  StageResult result = trainer.run();
  trainer.restore_best();
  return result;
}

}  // namespace cnpadv::train
