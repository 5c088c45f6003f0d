#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cnpadv/errors.hpp"
#include "cnpadv/experiment.hpp"
#include "cnpadv/training.hpp"

using namespace cnpadv;
using diff::Tensor;

namespace {

struct Fixture {
  data::MetaDataset train, val;
  model::ModelConfig mcfg;
  train::TrainConfig tc;

  Fixture() {
    const data::MetaDataset raw = data::gen_sine(48, 24, 7);
    const data::NormStats stats = data::compute_norm_stats(raw);
    train = data::normalize(raw, stats);
    data::MetaDataset v = data::gen_sine(16, 24, 8);
    v.split = data::Split::Validation;
    val = data::normalize(v, stats);

    mcfg.d_r = 16;
    mcfg.encoder_hidden = {16};
    mcfg.decoder_hidden = {16};

    tc.batch_size = 8;
    tc.epochs_stage1 = 4;
    tc.epochs_stage2 = 4;
    tc.frac_lo = 0.2;
    tc.frac_hi = 0.4;
    tc.patience = 20;
    tc.seed = 5;
  }
};

bool params_equal(const diff::ParamStore& a, const std::vector<Tensor>& snapshot) {
  std::size_t i = 0;
  for (const auto& p : a) {
    if (!(p.value == snapshot[i++])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("select_update_side") {
  using train::UpdateSide;
  CHECK(train::select_update_side(0.7, 0.6) == UpdateSide::UpdateCnp);
  CHECK(train::select_update_side(0.5, 0.6) == UpdateSide::UpdateEbm);
  // boundary: "greater than" is strict
  CHECK(train::select_update_side(0.6, 0.6) == UpdateSide::UpdateEbm);
}

TEST_CASE("combined_loss") {
  CHECK(train::combined_loss(3.0, 9.0, 0.0) == 3.0);
  CHECK(train::combined_loss(3.0, 9.0, 1.0) == 9.0);
  CHECK(train::combined_loss(2.0, 4.0, 0.1) == doctest::Approx(2.2).epsilon(1e-15));
}

TEST_CASE("train config parsing") {
  SUBCASE("round-trip through key=value text") {
    train::TrainConfig cfg;
    cfg.alpha = 0.55;
    cfg.beta = 0.25;
    cfg.noise_ratio = 3;
    cfg.fake_mode = model::SampleMode::Mean;
    cfg.alpha_decision = train::AlphaDecision::NextBatch;
    KvConfig kv;
    train::train_config_to_kv(cfg, kv);
    KvConfig parsed = KvConfig::parse_text(kv.canonical());
    const train::TrainConfig back = train::train_config_from_kv(parsed);
    parsed.finish();
    CHECK(back.alpha == cfg.alpha);
    CHECK(back.beta == cfg.beta);
    CHECK(back.noise_ratio == 3);
    CHECK(back.fake_mode == model::SampleMode::Mean);
    CHECK(back.alpha_decision == train::AlphaDecision::NextBatch);
  }
  SUBCASE("unknown keys are rejected") {
    KvConfig kv = KvConfig::parse_text("alpha = 0.5\nmystery_knob = 1\n");
    train::train_config_from_kv(kv);
    CHECK_THROWS_AS(kv.finish(), ConfigError);
  }
  SUBCASE("invalid ranges are rejected") {
    KvConfig kv = KvConfig::parse_text("alpha = 1.5\n");
    CHECK_THROWS_AS(train::train_config_from_kv(kv), ConfigError);
    KvConfig kv2 = KvConfig::parse_text("beta = -0.1\n");
    CHECK_THROWS_AS(train::train_config_from_kv(kv2), ConfigError);
    KvConfig kv3 = KvConfig::parse_text("patience = 0\n");
    CHECK_THROWS_AS(train::train_config_from_kv(kv3), ConfigError);
  }
}

TEST_CASE("stage-1 mechanism checks") {
  Fixture f;
  SUBCASE("frozen learning rate with patience 1 stops after one non-improving epoch") {
    f.tc.lr_stage1 = 0.0;
    f.tc.patience = 1;
    f.tc.epochs_stage1 = 50;
    model::CnpModel m(f.mcfg, 2);
    const train::StageResult r = train::train_stage1(m, f.train, f.val, f.tc);
    CHECK(r.epochs_run == 1);
    CHECK(r.history.epochs.size() == 1);
    CHECK(!r.history.epochs[0].improved);
  }
  SUBCASE("two runs with the same seed produce identical histories") {
    model::CnpModel m1(f.mcfg, 3), m2(f.mcfg, 3);
    const train::StageResult r1 = train::train_stage1(m1, f.train, f.val, f.tc);
    const train::StageResult r2 = train::train_stage1(m2, f.train, f.val, f.tc);
    REQUIRE(r1.history.batches.size() == r2.history.batches.size());
    for (std::size_t i = 0; i < r1.history.batches.size(); ++i) {
      CHECK(r1.history.batches[i].l1 == r2.history.batches[i].l1);
    }
    REQUIRE(r1.history.epochs.size() == r2.history.epochs.size());
    for (std::size_t i = 0; i < r1.history.epochs.size(); ++i) {
      CHECK(r1.history.epochs[i].val_l1 == r2.history.epochs[i].val_l1);
    }
    CHECK(params_equal(m1.params(), diff::snapshot_values(m2.params())));
  }
  SUBCASE("validation loss improves from the first epoch on a seeded run") {
    model::CnpModel m(f.mcfg, 4);
    f.tc.epochs_stage1 = 6;
    const train::StageResult r = train::train_stage1(m, f.train, f.val, f.tc);
    REQUIRE(!r.history.epochs.empty());
    CHECK(r.history.epochs.front().improved);
    CHECK(r.best_val < r.history.epochs.front().val_l1 * 1.0 + 1e-12);
  }
  SUBCASE("a poisoned parameter aborts with the last good checkpoint") {
    model::CnpModel m(f.mcfg, 5);
    const std::vector<Tensor> initial = diff::snapshot_values(m.params());
    // output-layer bias: the NaN reaches the loss without a relu in between
    m.params().find("decoder.b1")->value[0] = std::nan("");
    const train::StageResult r = train::train_stage1(m, f.train, f.val, f.tc);
    CHECK(r.history.aborted);
    CHECK(r.history.abort_reason.find("non-finite") != std::string::npos);
  }
}

TEST_CASE("stage-2 alternation") {
  Fixture f;
  f.tc.lr_stage2_ebm = 3e-3;  // faster discrimination keeps the test short
  model::CnpModel m(f.mcfg, 11);
  train::train_stage1(m, f.train, f.val, f.tc);

  ebm::EbmModel e({1, {16}, false, 1}, 12);
  train::Trainer trainer(2, m, &e, f.train, f.val, f.tc);

  SUBCASE("exactly one side changes per batch and both sides occur") {
    bool saw_cnp = false, saw_ebm = false;
    for (int step = 0; step < 300 && !trainer.done(); ++step) {
      const std::vector<Tensor> theta = diff::snapshot_values(m.params());
      const std::vector<Tensor> phi = diff::snapshot_values(e.params());
      trainer.step_batch();
      const auto& rec = trainer.history().batches.back();
      REQUIRE(rec.side.has_value());
      const bool theta_changed = !params_equal(m.params(), theta);
      const bool phi_changed = !params_equal(e.params(), phi);
      if (*rec.side == train::UpdateSide::UpdateCnp) {
        CHECK(theta_changed);
        CHECK(!phi_changed);
        saw_cnp = true;
      } else {
        CHECK(phi_changed);
        CHECK(!theta_changed);
        saw_ebm = true;
      }
      CHECK(rec.l2.has_value());
      CHECK(rec.ebm_acc.has_value());
      CHECK(rec.combined ==
            doctest::Approx(train::combined_loss(rec.l1, *rec.l2, f.tc.beta)).epsilon(1e-12));
      if (saw_cnp && saw_ebm && step > 40) break;
    }
    CHECK(saw_ebm);
    CHECK(saw_cnp);
  }
  SUBCASE("ebm updates push accuracy above one half") {
    double best_acc = 0.0;
    int ebm_updates = 0;
    for (int step = 0; step < 150 && !trainer.done(); ++step) {
      trainer.step_batch();
      const auto& rec = trainer.history().batches.back();
      if (rec.side == train::UpdateSide::UpdateEbm) ++ebm_updates;
      best_acc = std::max(best_acc, rec.ebm_acc.value_or(0.0));
    }
    CHECK(ebm_updates > 0);
    CHECK(best_acc > 0.5);
  }
}

TEST_CASE("stage-2 combined loss gradient with mean-mode fakes") {
  Fixture f;
  model::CnpModel m(f.mcfg, 21);
  ebm::EbmModel e({1, {8}, false, 1}, 22);
  Rng rng(23);
  const data::EpisodeBatch episode = data::make_episode(f.train, 2, 0.25, 0.25, rng);
  const data::EpisodeTensors et = data::gather(f.train, episode);

  diff::Graph g;
  const auto fwd = m.build_forward(g, et);
  const auto lp_true_theta = m.log_prob(g, fwd.dist, fwd.yt);
  const auto l1 = g.neg(g.mean_all(lp_true_theta));
  const auto yhat = fwd.dist.mu;  // mean-mode fakes, fully deterministic
  const auto l2 = ebm::nce_objective(g, e.log_prob(g, fwd.yt), lp_true_theta,
                                     e.log_prob(g, yhat), m.log_prob(g, fwd.dist, yhat),
                                     et.k);
  const auto combined = g.add(g.scale(l1, 1.0 - 0.1), g.scale(l2, 0.1));
  const auto r = diff::grad_check(g, combined, m.params(), 1e-5);
  CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("checkpoint round-trip and split-run resume") {
  Fixture f;
  f.tc.epochs_stage2 = 3;
  const std::string dir =
      (std::filesystem::temp_directory_path() / "cnpadv_ckpt_test").string();
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/trainer.ckpt";

  model::CnpModel m1(f.mcfg, 31);
  train::train_stage1(m1, f.train, f.val, f.tc);
  const std::vector<Tensor> stage1_params = diff::snapshot_values(m1.params());

  // Run A: a few batches, checkpoint mid-epoch, then continue.
  ebm::EbmModel e1({1, {16}, false, 1}, 32);
  train::Trainer a(2, m1, &e1, f.train, f.val, f.tc);
  for (int i = 0; i < 7; ++i) a.step_batch();
  a.save_checkpoint(path);
  a.step_batch();
  const auto& rec_a = a.history().batches.back();

  // Run B: fresh objects, resume from the checkpoint, take the same step.
  model::CnpModel m2(f.mcfg, 31);
  diff::restore_values(m2.params(), stage1_params);
  ebm::EbmModel e2({1, {16}, false, 1}, 32);
  train::Trainer b(2, m2, &e2, f.train, f.val, f.tc);
  b.load_checkpoint(path);
  b.step_batch();
  const auto& rec_b = b.history().batches.back();

  CHECK(rec_b.l1 == rec_a.l1);
  CHECK(rec_b.l2.value() == rec_a.l2.value());
  CHECK(rec_b.ebm_acc.value() == rec_a.ebm_acc.value());
  CHECK(rec_b.side == rec_a.side);
  CHECK(params_equal(m2.params(), diff::snapshot_values(m1.params())));
  CHECK(params_equal(e2.params(), diff::snapshot_values(e1.params())));

  SUBCASE("config mismatch is a checkpoint error") {
    model::CnpModel m3(f.mcfg, 31);
    ebm::EbmModel e3({1, {16}, false, 1}, 32);
    train::TrainConfig other = f.tc;
    other.beta = 0.9;
    train::Trainer c(2, m3, &e3, f.train, f.val, other);
    CHECK_THROWS_AS(c.load_checkpoint(path), CheckpointError);
  }
  SUBCASE("corrupt file is a checkpoint error") {
    std::ofstream(path + ".bad") << "cnpadv-train-checkpoint v999\n";
    model::CnpModel m3(f.mcfg, 31);
    ebm::EbmModel e3({1, {16}, false, 1}, 32);
    train::Trainer c(2, m3, &e3, f.train, f.val, f.tc);
    CHECK_THROWS_AS(c.load_checkpoint(path + ".bad"), CheckpointError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("stage-2 never hands back a model worse than its input") {
  Fixture f;
  model::CnpModel m(f.mcfg, 41);
  train::train_stage1(m, f.train, f.val, f.tc);
  const std::vector<Tensor> incoming = diff::snapshot_values(m.params());

  // Stage 2 with zero learning rates cannot improve; the restored best must
  // be exactly the incoming parameters.
  train::TrainConfig tc = f.tc;
  tc.lr_stage2_cnp = 0.0;
  tc.lr_stage2_ebm = 0.0;
  tc.epochs_stage2 = 2;
  ebm::EbmModel e({1, {16}, false, 1}, 42);
  train::train_stage2(m, e, f.train, f.val, tc);
  CHECK(params_equal(m.params(), incoming));
}

TEST_CASE("fresh ebm construction is deterministic in the seed") {
  ebm::EbmModel a({1, {128}, false, 1}, 77);
  ebm::EbmModel b({1, {128}, false, 1}, 77);
  CHECK(params_equal(a.params(), diff::snapshot_values(b.params())));
}
