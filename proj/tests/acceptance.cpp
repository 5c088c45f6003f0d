// Acceptance suite: runs the numbered criteria and prints one line each:
//   [PASS] criterion N: <summary>
//   [FAIL] criterion N: <summary>
// Usage: acceptance [N | all]. Exit code 0 iff every requested criterion
// passes. Criteria 7-12 train real (desk-scale) models and take minutes.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "cnpadv/cnp.hpp"
#include "cnpadv/datasets.hpp"
#include "cnpadv/downstream.hpp"
#include "cnpadv/ebm.hpp"
#include "cnpadv/errors.hpp"
#include "cnpadv/experiment.hpp"
#include "cnpadv/training.hpp"

using namespace cnpadv;
using diff::Graph;
using diff::Tensor;

namespace {

bool g_all_passed = true;

void report(int criterion, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!pass) g_all_passed = false;
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "  .. %s\n", msg.c_str());
}

Tensor random_tensor(Rng& rng, int rows, int cols) {
  Tensor t = Tensor::zeros(rows, cols);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Seeded 2-function / 5-point episode used by the gradient criteria.
data::EpisodeTensors small_episode(std::uint64_t seed) {
  const data::MetaDataset ds = data::normalize(data::gen_sine(8, 5, seed));
  Rng rng(seed ^ 0x51ull);
  const data::EpisodeBatch ep = data::make_episode(ds, 2, 0.4, 0.4, rng);
  return data::gather(ds, ep);
}

// --- experiment specs pinned for the quantitative criteria (desk scale) ---

exp::ExperimentSpec sine_spec() {
  exp::ExperimentSpec spec;
  spec.id = "acceptance-sine";
  spec.data = {"sine", 500, 500, 500, 100, 0.2, 1234};
  spec.variant = model::Variant::Cnp;
  spec.adversarial = true;
  spec.seeds = {0, 1, 2};
  spec.out_dir = "acceptance_out";
  spec.tc.epochs_stage1 = 200;
  spec.tc.epochs_stage2 = 200;
  spec.tc.batch_size = 16;
  spec.tc.frac_lo = 0.04;
  spec.tc.frac_hi = 0.2;
  spec.tc.alpha = 0.6;
  spec.tc.beta = 0.1;
  spec.tc.lr_stage1 = 1e-3;
  spec.tc.lr_stage2_cnp = 7e-4;
  spec.tc.lr_stage2_ebm = 7e-4;
  spec.tc.weight_decay = 6e-5;
  spec.tc.patience = 20;
  return spec;
}

exp::ExperimentSpec oscillator_spec() {
  exp::ExperimentSpec spec = sine_spec();
  spec.id = "acceptance-oscillator";
  spec.data.family = "oscillator";
  return spec;
}

exp::ExperimentSpec gp_spec(model::Variant variant) {
  exp::ExperimentSpec spec;
  spec.id = std::string("acceptance-gp-") + model::to_string(variant);
  spec.data = {"gp-rbf", 1024, 128, 256, 64, 0.2, 1234};
  spec.variant = variant;
  spec.adversarial = true;
  spec.seeds = {0, 1, 2};
  spec.out_dir = "acceptance_out";
  spec.tc.epochs_stage1 = 30;
  spec.tc.epochs_stage2 = 20;
  spec.tc.batch_size = 128;
  spec.tc.frac_lo = 0.1;
  spec.tc.frac_hi = 0.3;
  spec.tc.alpha = 0.6;
  spec.tc.beta = 0.1;
  spec.tc.lr_stage1 = 1e-3;
  spec.tc.lr_stage2_cnp = 7e-4;
  spec.tc.lr_stage2_ebm = 7e-4;
  spec.tc.weight_decay = 6e-5;
  spec.tc.patience = 8;
  return spec;
}

// ---------------------------------------------------------------------------

int criterion_1() {
  double worst = 0.0;
  std::string worst_name = "none";
  auto track = [&](const std::string& name, double err) {
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  const data::EpisodeTensors et = small_episode(11);
  {
    model::CnpModel m(exp::make_model_config("sine", model::Variant::Cnp), 3);
    Graph g;
    const auto loss = m.mle_loss(g, et);
    track("mle_loss", diff::grad_check(g, loss, m.params(), 1e-5).max_rel_err);
  }
  {
    model::CnpModel m(exp::make_model_config("sine", model::Variant::Ccnp), 4);
    Rng split_rng(5);
    Graph g;
    const auto loss = m.contrastive_loss(g, et, split_rng);
    track("ccnp_contrastive_loss", diff::grad_check(g, loss, m.params(), 1e-5).max_rel_err);
  }
  {
    model::CnpModel m(exp::make_model_config("sine", model::Variant::Cnp), 6);
    // Central differences are only valid where no relu pre-activation sits
    // inside the probe window; this seed keeps the energy net's
    // pre-activations above 1e-4 (guarded below), clear of the 4e-5 window
    // that eps = 1e-5 sweeps over z-scored inputs.
    ebm::EbmModel e(exp::make_ebm_config("sine", false), 6);
    Graph g;
    const auto fwd = m.build_forward(g, et);
    const auto lp_true_theta = m.log_prob(g, fwd.dist, fwd.yt);
    Rng noise(8);
    const auto yhat =
        g.add(fwd.dist.mu, g.mul(fwd.dist.sigma, g.constant(random_tensor(noise, et.k * et.t, 1))));

    const auto* w0 = e.params().find("energy.w0");
    const auto* b0 = e.params().find("energy.b0");
    double kink_margin = 1e9;
    for (const Tensor* src : {&g.value(fwd.yt), &g.value(yhat)}) {
      for (int i = 0; i < src->rows(); ++i) {
        for (int u = 0; u < w0->value.cols(); ++u) {
          kink_margin =
              std::min(kink_margin, std::abs((*src)[i] * w0->value[u] + b0->value[u]));
        }
      }
    }
    if (kink_margin < 1e-4) {
      report(1, false, "invalid finite-difference probe point (relu kink in window)");
      return 1;
    }

    const auto loss =
        ebm::nce_objective(g, e.log_prob(g, fwd.yt), lp_true_theta, e.log_prob(g, yhat),
                           m.log_prob(g, fwd.dist, yhat), et.k);
    std::vector<diff::Parameter*> both = m.params().all();
    for (auto* p : e.params().all()) both.push_back(p);
    track("nce_objective",
          diff::grad_check(g, loss, std::span<diff::Parameter* const>(both), 1e-5).max_rel_err);
  }

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "gradient correctness: max rel err %.3e (%s) < 1e-4", worst,
                worst_name.c_str());
  report(1, worst < 1e-4, buf);
  return worst < 1e-4 ? 0 : 1;
}

int criterion_2() {
  const int trials_per_variant = 34;  // >= 100 permutations across the variants
  double worst = 0.0;
  Rng rng(21);
  const int c = 8, t = 12;
  for (const auto variant :
       {model::Variant::Cnp, model::Variant::Acnp, model::Variant::Ccnp}) {
    model::CnpModel m(exp::make_model_config("sine", variant), 22);
    data::EpisodeTensors et;
    et.k = 1;
    et.c = c;
    et.t = t;
    et.xt = random_tensor(rng, t, 1);
    et.yt = random_tensor(rng, t, 1);
    et.xc = Tensor::zeros(c, 1);
    et.yc = Tensor::zeros(c, 1);
    for (int i = 0; i < c; ++i) {
      et.xc[i] = et.xt[i];
      et.yc[i] = et.yt[i];
    }
    Graph g;
    const auto fwd = m.build_forward(g, et);
    const Tensor mu = g.value(fwd.dist.mu);
    const Tensor sigma = g.value(fwd.dist.sigma);

    for (int trial = 0; trial < trials_per_variant; ++trial) {
      std::vector<int> pc(c), pt(t);
      for (int i = 0; i < c; ++i) pc[i] = i;
      for (int i = 0; i < t; ++i) pt[i] = i;
      rng.shuffle(pc);
      rng.shuffle(pt);
      data::EpisodeTensors pet = et;
      for (int i = 0; i < c; ++i) {
        pet.xc[i] = et.xc[pc[i]];
        pet.yc[i] = et.yc[pc[i]];
      }
      for (int i = 0; i < t; ++i) {
        pet.xt[i] = et.xt[pt[i]];
        pet.yt[i] = et.yt[pt[i]];
      }
      Graph g2;
      const auto pfwd = m.build_forward(g2, pet);
      for (int i = 0; i < t; ++i) {
        worst = std::max(worst, std::abs(g2.value(pfwd.dist.mu)[i] - mu[pt[i]]));
        worst = std::max(worst, std::abs(g2.value(pfwd.dist.sigma)[i] - sigma[pt[i]]));
      }
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "exchangeability: 102 permutations, max row deviation %.3e < 1e-8", worst);
  report(2, worst < 1e-8, buf);
  return worst < 1e-8 ? 0 : 1;
}

int criterion_3() {
  double worst = 0.0;
  Rng rng(31);
  const int c = 6, t = 16;
  for (const auto variant :
       {model::Variant::Cnp, model::Variant::Acnp, model::Variant::Ccnp}) {
    model::CnpModel m(exp::make_model_config("sine", variant), 32);
    data::EpisodeTensors et;
    et.k = 1;
    et.c = c;
    et.t = t;
    et.xt = random_tensor(rng, t, 1);
    et.yt = random_tensor(rng, t, 1);
    et.xc = Tensor::zeros(c, 1);
    et.yc = Tensor::zeros(c, 1);
    for (int i = 0; i < c; ++i) {
      et.xc[i] = et.xt[i];
      et.yc[i] = et.yt[i];
    }
    Graph g;
    const auto fwd = m.build_forward(g, et);
    const Tensor mu = g.value(fwd.dist.mu);
    const Tensor sigma = g.value(fwd.dist.sigma);

    for (int trial = 0; trial < 10; ++trial) {
      // keep a random nonempty subset of targets
      std::vector<int> keep;
      for (int i = 0; i < t; ++i) {
        if (rng.uniform() < 0.6) keep.push_back(i);
      }
      if (keep.empty()) keep.push_back(rng.uniform_int(t));
      data::EpisodeTensors det = et;
      det.t = static_cast<int>(keep.size());
      det.xt = Tensor::zeros(det.t, 1);
      det.yt = Tensor::zeros(det.t, 1);
      for (int i = 0; i < det.t; ++i) {
        det.xt[i] = et.xt[keep[i]];
        det.yt[i] = et.yt[keep[i]];
      }
      Graph g2;
      const auto dfwd = m.build_forward(g2, det);
      for (int i = 0; i < det.t; ++i) {
        worst = std::max(worst, std::abs(g2.value(dfwd.dist.mu)[i] - mu[keep[i]]));
        worst = std::max(worst, std::abs(g2.value(dfwd.dist.sigma)[i] - sigma[keep[i]]));
      }
    }
  }
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "consistency under marginalization: max row deviation %.3e < 1e-12", worst);
  report(3, worst < 1e-12, buf);
  return worst < 1e-12 ? 0 : 1;
}

int criterion_4() {
  // Two-outcome discrete toy: tabular energy against a fixed explicit noise.
  const double pd1 = 0.7, pn1 = 0.3;
  const double pd0 = 1.0 - pd1, pn0 = 1.0 - pn1;
  auto lsig = [](double z) { return -diff::stable_softplus(-z); };
  auto objective = [&](double l0, double l1) {
    return pd0 * lsig(l0 - std::log(pn0)) + pd1 * lsig(l1 - std::log(pn1)) +
           pn0 * lsig(std::log(pn0) - l0) + pn1 * lsig(std::log(pn1) - l1);
  };
  double best_l0 = 0.0, best_l1 = 0.0;
  double lo0 = -6.0, hi0 = 1.0, lo1 = -6.0, hi1 = 1.0;
  for (int refine = 0; refine < 6; ++refine) {
    double best = -1e300;
    const int steps = 60;
    for (int i = 0; i <= steps; ++i) {
      for (int j = 0; j <= steps; ++j) {
        const double l0 = lo0 + (hi0 - lo0) * i / steps;
        const double l1 = lo1 + (hi1 - lo1) * j / steps;
        const double v = objective(l0, l1);
        if (v > best) {
          best = v;
          best_l0 = l0;
          best_l1 = l1;
        }
      }
    }
    const double w0 = (hi0 - lo0) / steps, w1 = (hi1 - lo1) / steps;
    lo0 = best_l0 - 2 * w0;
    hi0 = best_l0 + 2 * w0;
    lo1 = best_l1 - 2 * w1;
    hi1 = best_l1 + 2 * w1;
  }
  const double err =
      std::max(std::abs(std::exp(best_l0) - pd0), std::abs(std::exp(best_l1) - pd1));
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "NCE consistency: brute-force maximizer off by %.2e < 1e-3 from the true "
                "density ratio", err);
  report(4, err < 1e-3, buf);
  return err < 1e-3 ? 0 : 1;
}

int criterion_5() {
  bool pass = true;
  Rng rng(51);
  double worst_sum = 0.0;
  for (int i = 0; i < 500; ++i) {
    const double a = rng.normal() * 20.0, b = rng.normal() * 20.0;
    worst_sum = std::max(
        std::abs(ebm::posterior_true(a, b) + ebm::posterior_true(b, a) - 1.0), worst_sum);
  }
  pass = pass && worst_sum < 1e-12;
  pass = pass && ebm::posterior_true(-2.5, -2.5) == 0.5;
  const Tensor same = Tensor::matrix(4, 1, {0.4, -1.0, 2.0, 0.0});
  const double v = ebm::nce_objective_value(same, same, same, same, 1);
  const double gap = std::abs(v - 2.0 * std::log(0.5));
  pass = pass && gap < 1e-10;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "posterior identities: complement dev %.2e < 1e-12, equal-density posterior "
                "exact 0.5, Eq.7 value gap %.2e < 1e-10", worst_sum, gap);
  report(5, pass, buf);
  return pass ? 0 : 1;
}

int criterion_6() {
  const data::MetaDataset raw = data::gen_sine(64, 32, 61);
  const data::NormStats stats = data::compute_norm_stats(raw);
  const data::MetaDataset train = data::normalize(raw, stats);
  data::MetaDataset val_raw = data::gen_sine(16, 32, 62);
  const data::MetaDataset val = data::normalize(val_raw, stats);

  train::TrainConfig tc;
  tc.batch_size = 8;
  tc.epochs_stage1 = 3;
  tc.epochs_stage2 = 4;
  tc.frac_lo = 0.1;
  tc.frac_hi = 0.3;
  tc.patience = 50;
  tc.seed = 63;

  model::ModelConfig mcfg;
  mcfg.d_r = 32;
  mcfg.encoder_hidden = {32};
  mcfg.decoder_hidden = {32};
  model::CnpModel m(mcfg, 64);
  train::train_stage1(m, train, val, tc);
  const std::vector<Tensor> stage1_params = diff::snapshot_values(m.params());

  // Alternation integrity must hold on both branches. The accuracy starts
  // near 0.5, so alpha = 0.05 routes every early batch to the CNP side,
  // alpha = 0.95 to the EBM side, and alpha = 0.6 follows the live accuracy.
  bool pass = true;
  int batches = 0, cnp_updates = 0, ebm_updates = 0;
  for (const double alpha : {0.05, 0.6, 0.95}) {
    diff::restore_values(m.params(), stage1_params);
    train::TrainConfig tc2 = tc;
    tc2.alpha = alpha;
    ebm::EbmModel e({1, {32}, false, 1}, 65);
    train::Trainer trainer(2, m, &e, train, val, tc2);
    while (!trainer.done() && trainer.epoch() < tc2.epochs_stage2) {
      const std::vector<Tensor> theta = diff::snapshot_values(m.params());
      const std::vector<Tensor> phi = diff::snapshot_values(e.params());
      trainer.step_batch();
      ++batches;
      const auto& rec = trainer.history().batches.back();
      const std::vector<Tensor> theta2 = diff::snapshot_values(m.params());
      const std::vector<Tensor> phi2 = diff::snapshot_values(e.params());
      bool theta_changed = false, phi_changed = false;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        if (!(theta[i] == theta2[i])) theta_changed = true;
      }
      for (std::size_t i = 0; i < phi.size(); ++i) {
        if (!(phi[i] == phi2[i])) phi_changed = true;
      }
      if (rec.side == train::UpdateSide::UpdateCnp) {
        ++cnp_updates;
        pass = pass && theta_changed && !phi_changed;
      } else {
        ++ebm_updates;
        pass = pass && phi_changed && !theta_changed;
      }
    }
  }
  pass = pass && batches > 0 && cnp_updates > 0 && ebm_updates > 0;
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "alternation integrity: %d batches, one side bitwise-frozen in each "
                "(CNP %d / EBM %d updates)", batches, cnp_updates, ebm_updates);
  report(6, pass, buf);
  return pass ? 0 : 1;
}

struct PairedResult {
  std::vector<double> base, adv;
};

PairedResult run_paired(const exp::ExperimentSpec& spec) {
  PairedResult out;
  const exp::ExperimentResult result = exp::run_experiment(spec);
  for (const auto& o : result.seeds) {
    if (o.failed) throw TrainError("seed " + std::to_string(o.seed) + " failed: " + o.error);
    out.base.push_back(o.mse_stage1);
    out.adv.push_back(o.mse_stage2.value());
    progress("seed " + std::to_string(o.seed) + ": base " + std::to_string(o.mse_stage1) +
             " adv " + std::to_string(*o.mse_stage2));
  }
  return out;
}

int criterion_7() {
  progress("criterion 7: sine 500/500, 3 seeds (several minutes)");
  const PairedResult r = run_paired(sine_spec());
  const double base = mean_of(r.base), adv = mean_of(r.adv);
  const double improvement = (base - adv) / base;
  const bool pass = adv < base && improvement >= 0.15;
  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "sine: CNP %.4f +/- %.4f -> CNP-adv %.4f +/- %.4f (improvement %.1f%% >= 15%%)",
                base, std_of(r.base), adv, std_of(r.adv), improvement * 100.0);
  report(7, pass, buf);
  return pass ? 0 : 1;
}

int criterion_8() {
  progress("criterion 8: oscillator 500/500, 3 seeds (several minutes)");
  const PairedResult r = run_paired(oscillator_spec());
  const double base = mean_of(r.base), adv = mean_of(r.adv);
  const bool pass = adv < base;
  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "oscillator: CNP %.4f +/- %.4f -> CNP-adv %.4f +/- %.4f (mean improvement "
                "%.1f%%)", base, std_of(r.base), adv, std_of(r.adv),
                (base - adv) / base * 100.0);
  report(8, pass, buf);
  return pass ? 0 : 1;
}

int criterion_9() {
  progress("criterion 9: gp-rbf desk config, CNP and ACNP, 3 seeds (tens of minutes)");
  const PairedResult cnp = run_paired(gp_spec(model::Variant::Cnp));
  const PairedResult acnp = run_paired(gp_spec(model::Variant::Acnp));
  const double cnp_base = mean_of(cnp.base), cnp_adv = mean_of(cnp.adv);
  const double acnp_base = mean_of(acnp.base), acnp_adv = mean_of(acnp.adv);
  const bool pass = cnp_adv < cnp_base && acnp_adv < acnp_base;
  char buf[260];
  std::snprintf(buf, sizeof(buf),
                "gp-rbf: CNP %.4f -> %.4f, ACNP %.4f -> %.4f (both adversarial runs improve)",
                cnp_base, cnp_adv, acnp_base, acnp_adv);
  report(9, pass, buf);
  return pass ? 0 : 1;
}

int criterion_10() {
  progress("criterion 10: sine beta sweep {0.1, 0.3, 0.5, 1.0}, 3 seeds (several minutes)");
  exp::ExperimentSpec spec = sine_spec();
  spec.id = "acceptance-beta";
  spec.tc.epochs_stage2 = 120;
  const std::vector<double> betas{0.1, 0.3, 0.5, 1.0};
  const exp::BetaSweepResult sweep = exp::run_beta_sweep(spec, betas);
  std::vector<double> mean_mse(betas.size(), 0.0);
  std::vector<int> counts(betas.size(), 0);
  bool ok = sweep.exit_code == 0;
  for (const auto& row : sweep.rows) {
    if (row.failed) {
      ok = false;
      continue;
    }
    for (std::size_t i = 0; i < betas.size(); ++i) {
      if (row.beta == betas[i]) {
        mean_mse[i] += row.mse;
        counts[i] += 1;
      }
    }
  }
  for (std::size_t i = 0; i < betas.size(); ++i) mean_mse[i] /= std::max(1, counts[i]);
  std::size_t worst_idx = 0;
  for (std::size_t i = 1; i < betas.size(); ++i) {
    if (mean_mse[i] > mean_mse[worst_idx]) worst_idx = i;
  }
  const bool pass = ok && betas[worst_idx] == 1.0;
  char buf[260];
  std::snprintf(buf, sizeof(buf),
                "beta ablation: mean MSE {0.1: %.4f, 0.3: %.4f, 0.5: %.4f, 1.0: %.4f}; "
                "beta=1.0 is the worst", mean_mse[0], mean_mse[1], mean_mse[2], mean_mse[3]);
  report(10, pass, buf);
  return pass ? 0 : 1;
}

int criterion_11() {
  progress("criterion 11: oscillator downstream amplitude heads (several minutes)");
  exp::ExperimentSpec spec = oscillator_spec();
  spec.id = "acceptance-downstream";
  const exp::Splits splits = exp::build_splits(spec.data);
  const std::vector<double> fractions{0.2, 0.4, 0.6, 0.8};
  // mean over seeds, per fraction, for the stage-1 (base) and stage-2 (adv) models
  std::vector<double> base_curve(fractions.size(), 0.0), adv_curve(fractions.size(), 0.0);

  for (const std::uint64_t seed : spec.seeds) {
    model::CnpModel m(exp::make_model_config(spec.data.family, spec.variant), seed);
    train::TrainConfig tc = spec.tc;
    tc.seed = seed;
    train::train_stage1(m, splits.train, splits.val, tc);
    const std::vector<Tensor> base_params = diff::snapshot_values(m.params());

    ebm::EbmModel e(exp::make_ebm_config(spec.data.family, false), seed ^ 0xeb0000ull);
    train::train_stage2(m, e, splits.train, splits.val, tc);
    const std::vector<Tensor> adv_params = diff::snapshot_values(m.params());

    auto head_mse = [&](const std::vector<Tensor>& params, double fraction) {
      model::CnpModel frozen(exp::make_model_config(spec.data.family, spec.variant), seed);
      diff::restore_values(frozen.params(), params);
      downstream::HeadConfig hc;
      hc.d_r = frozen.config().d_r;
      downstream::Head head(hc, seed ^ 0x4ead5ull);
      downstream::HeadTrainConfig htc;
      htc.context_fraction = fraction;
      htc.seed = seed;
      htc.target = "a";
      downstream::train_head(head, frozen, splits.train, htc);
      return downstream::eval_head(head, frozen, splits.test, fraction, "a", seed ^ 0x7e57ull);
    };
    for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
      base_curve[fi] += head_mse(base_params, fractions[fi]);
      adv_curve[fi] += head_mse(adv_params, fractions[fi]);
    }
    progress("seed " + std::to_string(seed) + " heads done");
  }
  for (auto& v : base_curve) v /= static_cast<double>(spec.seeds.size());
  for (auto& v : adv_curve) v /= static_cast<double>(spec.seeds.size());

  bool monotone = true;
  for (std::size_t i = 1; i < fractions.size(); ++i) {
    if (adv_curve[i] > adv_curve[i - 1]) monotone = false;
    if (base_curve[i] > base_curve[i - 1]) monotone = false;
  }
  bool dominated = true;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    if (adv_curve[i] > base_curve[i]) dominated = false;
  }
  const bool pass = monotone && dominated;
  char buf[300];
  std::snprintf(buf, sizeof(buf),
                "downstream: base {%.4f %.4f %.4f %.4f} adv {%.4f %.4f %.4f %.4f}; "
                "non-increasing in fraction and adv <= base everywhere",
                base_curve[0], base_curve[1], base_curve[2], base_curve[3], adv_curve[0],
                adv_curve[1], adv_curve[2], adv_curve[3]);
  report(11, pass, buf);
  return pass ? 0 : 1;
}

int criterion_12() {
  progress("criterion 12: stage-2 vs stage-1 per-epoch overhead on the sine config");
  exp::ExperimentSpec spec = sine_spec();
  spec.id = "acceptance-overhead";
  const exp::OverheadReport report_data = exp::run_overhead_bench(spec, 7);
  const bool pass = report_data.ratio <= 2.0 && report_data.ratio > 0.0;
  char buf[200];
  std::snprintf(buf, sizeof(buf),
                "overhead: stage1 %.3fs/epoch, stage2 %.3fs/epoch, ratio %.3f <= 2.0",
                report_data.stage1_median, report_data.stage2_median, report_data.ratio);
  report(12, pass, buf);
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  int (*criteria[])() = {criterion_1, criterion_2, criterion_3, criterion_4,
                         criterion_5, criterion_6, criterion_7, criterion_8,
                         criterion_9, criterion_10, criterion_11, criterion_12};
  try {
    if (argc > 1 && std::strcmp(argv[1], "all") != 0) {
      const int n = std::atoi(argv[1]);
      if (n < 1 || n > 12) {
        std::fprintf(stderr, "usage: acceptance [1-12 | all]\n");
        return 2;
      }
      return criteria[n - 1]();
    }
    for (auto* fn : criteria) fn();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "acceptance aborted: %s\n", e.what());
    return 1;
  }
  return g_all_passed ? 0 : 1;
}
