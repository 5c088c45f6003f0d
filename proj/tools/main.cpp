// cnpadv: train, calibrate, and evaluate conditional neural processes with
// an adversarial noise-contrastive stage, plus dataset generation and
// experiment reproduction utilities.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cnpadv/cnp.hpp"
#include "cnpadv/datasets.hpp"
#include "cnpadv/downstream.hpp"
#include "cnpadv/ebm.hpp"
#include "cnpadv/errors.hpp"
#include "cnpadv/experiment.hpp"
#include "cnpadv/training.hpp"

namespace fs = std::filesystem;
using namespace cnpadv;

namespace {

struct CommonOpts {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* c = cmd->add_option("--config", opts.config, "experiment config file (key = value)");
  if (config_required) c->required();
  cmd->add_option("--override", opts.overrides, "override config entries, key=value");
  cmd->add_option("--out", opts.out, "output directory");
  cmd->add_option("--seed", opts.seed, "seed override")->each([&](const std::string&) {
    opts.seed_set = true;
  });
}

KvConfig load_config(const CommonOpts& opts) {
  KvConfig kv = opts.config.empty() ? KvConfig() : KvConfig::parse_file(opts.config);
  for (const std::string& item : opts.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--override expects key=value, got: " + item);
    }
    kv.set(item.substr(0, eq), item.substr(eq + 1));
  }
  if (!opts.out.empty()) kv.set("out", opts.out);
  if (opts.seed_set) {
    kv.set("seed", std::to_string(opts.seed));
    kv.set("seeds", std::to_string(opts.seed));
  }
  return kv;
}

exp::ExperimentSpec load_spec(const CommonOpts& opts) {
  KvConfig kv = load_config(opts);
  exp::ExperimentSpec spec = exp::spec_from_kv(kv);
  kv.finish();
  return spec;
}

int cmd_generate_data(const CommonOpts& opts) {
  KvConfig kv = load_config(opts);
  exp::DatasetSpec ds;
  ds.family = kv.get_string("family", ds.family);
  ds.n_train = kv.get_int("n_train", ds.n_train);
  ds.n_val = kv.get_int("n_val", ds.n_val);
  ds.n_test = kv.get_int("n_test", ds.n_test);
  ds.n_points = kv.get_int("n_points", ds.n_points);
  ds.gp_sigma = kv.get_double("gp_sigma", ds.gp_sigma);
  ds.data_seed = kv.get_u64("data_seed", kv.get_u64("seed", ds.data_seed));
  const std::string out = kv.get_string("out", "data");
  kv.finish();

  const exp::Splits splits = exp::build_splits(ds);
  fs::create_directories(out);
  const std::string stem = out + "/" + ds.family;
  data::save_dataset(stem + "_train.txt", splits.train);
  data::save_dataset(stem + "_validation.txt", splits.val);
  data::save_dataset(stem + "_test.txt", splits.test);
  std::cout << "wrote " << stem << "_{train,validation,test}.txt ("
            << splits.train.size() << "/" << splits.val.size() << "/" << splits.test.size()
            << " instances, " << ds.n_points << " points)\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  const exp::ExperimentSpec spec = load_spec(opts);
  const std::uint64_t seed = spec.seeds.empty() ? spec.tc.seed : spec.seeds.front();
  const std::string run_dir = exp::make_run_dir(spec.out_dir, spec.id);
  const std::string hash = spec.hash();

  const exp::Splits splits = exp::build_splits(spec.data);
  model::CnpModel model(exp::make_model_config(spec.data.family, spec.variant), seed);
  train::TrainConfig tc = spec.tc;
  tc.seed = seed;

  auto drive = [&](train::Trainer& trainer, int budget, const std::string& tag) {
    std::size_t seen = 0;
    while (!trainer.done() && trainer.epoch() < budget) {
      trainer.step_batch();
      const auto& epochs = trainer.history().epochs;
      for (; seen < epochs.size(); ++seen) {
        if (epochs[seen].improved) {
          trainer.save_checkpoint(run_dir + "/checkpoint_" + tag + "_best.txt");
        }
      }
    }
    trainer.save_checkpoint(run_dir + "/checkpoint_" + tag + "_exit.txt");
    trainer.restore_best();
  };

  {
    train::Trainer trainer(1, model, nullptr, splits.train, splits.val, tc);
    drive(trainer, tc.epochs_stage1, "stage1");
    exp::write_history_csv(run_dir, trainer.history(), hash, "stage1");
    diff::save_params_file(run_dir + "/model_stage1.txt", model.params());
    const double mse = exp::eval_test_mse(model, splits.test, tc.frac_hi, seed ^ 0xe7a1ull);
    std::cout << "stage 1 done: best val " << trainer.best_val() << " (epoch "
              << trainer.best_epoch() << "), test mse " << mse << "\n";
  }

  if (spec.adversarial) {
    ebm::EbmModel ebm_model(exp::make_ebm_config(spec.data.family, spec.ebm_include_x),
                            seed ^ 0xeb0000ull);
    train::Trainer trainer(2, model, &ebm_model, splits.train, splits.val, tc);
    drive(trainer, tc.epochs_stage2, "stage2");
    exp::write_history_csv(run_dir, trainer.history(), hash, "stage2");
    diff::save_params_file(run_dir + "/model_stage2.txt", model.params());
    diff::save_params_file(run_dir + "/ebm_stage2.txt", ebm_model.params());
    const double mse = exp::eval_test_mse(model, splits.test, tc.frac_hi, seed ^ 0xe7a2ull);
    std::cout << "stage 2 done: best val " << trainer.best_val() << " (epoch "
              << trainer.best_epoch() << "), test mse " << mse << "\n";
  }

  std::cout << "outputs in " << run_dir << "\n";
  return 0;
}

int cmd_run(const CommonOpts& opts) {
  const exp::ExperimentSpec spec = load_spec(opts);
  const exp::ExperimentResult result = exp::run_experiment(spec);
  for (const auto& o : result.seeds) {
    if (o.failed) {
      std::cout << "seed " << o.seed << ": FAILED (" << o.error << ")\n";
      continue;
    }
    std::cout << "seed " << o.seed << ": stage1 mse " << o.mse_stage1;
    if (o.mse_stage2) std::cout << ", stage2 mse " << *o.mse_stage2;
    std::cout << "\n";
  }
  std::cout << "outputs in " << result.run_dir << "\n";
  return result.exit_code;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint, double fraction) {
  const exp::ExperimentSpec spec = load_spec(opts);
  const exp::Splits splits = exp::build_splits(spec.data);
  const std::uint64_t seed = spec.seeds.empty() ? 0 : spec.seeds.front();
  model::CnpModel model(exp::make_model_config(spec.data.family, spec.variant), seed);
  diff::load_params_file(checkpoint, model.params());
  const double frac = fraction > 0.0 ? fraction : spec.tc.frac_hi;
  const double mse = exp::eval_test_mse(model, splits.test, frac, seed ^ 0xe7a1ull);
  std::cout << "test mse at fraction " << frac << ": " << mse << " (x10: " << mse * 10.0
            << ")\n";
  return 0;
}

int cmd_downstream(const CommonOpts& opts, const std::string& checkpoint,
                   const std::string& task, std::vector<double> fractions) {
  const exp::ExperimentSpec spec = load_spec(opts);
  std::string target;
  if (task == "amp") {
    target = "a";
  } else if (task == "shift") {
    target = "b";
  } else if (task == "label") {
    target = "label";
  } else {
    throw ConfigError("downstream task must be amp, shift, or label");
  }
  if (fractions.empty()) fractions = {0.2, 0.4, 0.6, 0.8};

  const exp::Splits splits = exp::build_splits(spec.data);
  const model::ModelConfig mcfg = exp::make_model_config(spec.data.family, spec.variant);
  model::CnpModel model(mcfg, spec.seeds.empty() ? 0 : spec.seeds.front());
  diff::load_params_file(checkpoint, model.params());

  const std::string run_dir = exp::make_run_dir(spec.out_dir, spec.id + "-downstream");
  std::ofstream os(run_dir + "/downstream.csv");
  os << "spec_hash,task,fraction,seed,metric\n";
  const std::string hash = spec.hash();
  for (const double fraction : fractions) {
    for (const std::uint64_t seed : spec.seeds) {
      downstream::HeadConfig hc;
      hc.d_r = mcfg.d_r;
      hc.d_out = 1;
      hc.classification = target == "label";
      downstream::Head head(hc, seed ^ 0x4ead5ull);
      downstream::HeadTrainConfig htc;
      htc.context_fraction = fraction;
      htc.seed = seed;
      htc.target = target;
      downstream::train_head(head, model, splits.train, htc);
      const double metric = downstream::eval_head(head, model, splits.test, fraction,
                                                  target, seed ^ 0x7e57ull);
      os << hash << "," << task << "," << diff::format_double(fraction) << "," << seed << ","
         << diff::format_double(metric) << "\n";
      std::cout << "fraction " << fraction << " seed " << seed << " " << task << " "
                << (hc.classification ? "acc " : "mse ") << metric << "\n";
    }
  }
  std::cout << "outputs in " << run_dir << "\n";
  return 0;
}

int cmd_beta_sweep(const CommonOpts& opts, std::vector<double> betas) {
  const exp::ExperimentSpec spec = load_spec(opts);
  if (betas.empty()) betas = {0.1, 0.3, 0.5, 1.0};
  const exp::BetaSweepResult result = exp::run_beta_sweep(spec, betas);
  for (const auto& row : result.rows) {
    std::cout << "beta " << row.beta << " seed " << row.seed << ": ";
    if (row.failed) {
      std::cout << "FAILED (" << row.error << ")\n";
    } else {
      std::cout << "mse " << row.mse << "\n";
    }
  }
  std::cout << "outputs in " << result.run_dir << "\n";
  return result.exit_code;
}

int cmd_bench(const CommonOpts& opts, int epochs) {
  const exp::ExperimentSpec spec = load_spec(opts);
  const exp::OverheadReport report = exp::run_overhead_bench(spec, epochs);
  const std::string run_dir = exp::make_run_dir(spec.out_dir, spec.id + "-bench");
  std::ofstream os(run_dir + "/overhead.csv");
  os << "spec_hash,stage,epoch,seconds\n";
  for (std::size_t i = 0; i < report.stage1_epoch_seconds.size(); ++i) {
    os << spec.hash() << ",1," << i << ","
       << diff::format_double(report.stage1_epoch_seconds[i]) << "\n";
  }
  for (std::size_t i = 0; i < report.stage2_epoch_seconds.size(); ++i) {
    os << spec.hash() << ",2," << i << ","
       << diff::format_double(report.stage2_epoch_seconds[i]) << "\n";
  }
  std::printf("stage1 median %.4fs, stage2 median %.4fs, ratio %.3f\n", report.stage1_median,
              report.stage2_median, report.ratio);
  std::cout << "outputs in " << run_dir << "\n";
  return 0;
}

int cmd_gradcheck() {
  // End-to-end gradient verification on a tiny seeded episode, mirroring the
  // property suite: the three training losses against central differences.
  Rng data_rng(7);
  data::MetaDataset ds = data::normalize(data::gen_sine(8, 12, 99));
  const data::EpisodeBatch episode = data::make_episode(ds, 2, 0.4, 0.4, data_rng);
  const data::EpisodeTensors et = data::gather(ds, episode);

  bool ok = true;
  auto report = [&](const std::string& name, const diff::GradCheckResult& r, double tol) {
    const bool pass = r.max_rel_err < tol;
    ok = ok && pass;
    std::printf("%-24s max rel err %.3e (tol %.0e) %s\n", name.c_str(), r.max_rel_err, tol,
                pass ? "ok" : "FAIL");
  };

  {
    model::ModelConfig mc;
    mc.d_r = 16;
    mc.encoder_hidden = {16};
    mc.decoder_hidden = {16};
    model::CnpModel m(mc, 3);
    diff::Graph g;
    const auto loss = m.mle_loss(g, et);
    report("mle_loss", diff::grad_check(g, loss, m.params(), 1e-5), 1e-4);
  }
  {
    model::ModelConfig mc;
    mc.variant = model::Variant::Ccnp;
    mc.d_r = 16;
    mc.encoder_hidden = {16};
    mc.decoder_hidden = {16};
    mc.projector_hidden = {16};
    mc.projector_out = 8;
    model::CnpModel m(mc, 4);
    Rng split_rng(11);
    diff::Graph g;
    const auto loss = m.contrastive_loss(g, et, split_rng);
    report("ccnp_contrastive_loss", diff::grad_check(g, loss, m.params(), 1e-5), 1e-4);
  }
  {
    model::ModelConfig mc;
    mc.d_r = 16;
    mc.encoder_hidden = {16};
    mc.decoder_hidden = {16};
    model::CnpModel m(mc, 5);
    ebm::EbmModel e({1, {8}, false, 1}, 6);
    diff::Graph g;
    const auto fwd = m.build_forward(g, et);
    const auto lp_true_theta = m.log_prob(g, fwd.dist, fwd.yt);
    Rng noise(13);
    diff::Tensor eps = diff::Tensor::zeros(et.k * et.t, 1);
    for (std::int64_t i = 0; i < eps.size(); ++i) eps[i] = noise.normal();
    const auto yhat = g.add(fwd.dist.mu, g.mul(fwd.dist.sigma, g.constant(eps)));
    const auto loss = ebm::nce_objective(g, e.log_prob(g, fwd.yt), lp_true_theta,
                                         e.log_prob(g, yhat), m.log_prob(g, fwd.dist, yhat),
                                         et.k);
    std::vector<diff::Parameter*> both = m.params().all();
    for (auto* p : e.params().all()) both.push_back(p);
    diff::Graph::NodeId neg_loss = g.neg(loss);  // check through the minimized form
    report("nce_objective",
           diff::grad_check(g, neg_loss, std::span<diff::Parameter* const>(both), 1e-5),
           1e-4);
  }
  std::puts(ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarially calibrated conditional neural processes"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, run_opts, eval_opts, down_opts, beta_opts, bench_opts;

  auto* gen = app.add_subcommand("generate-data", "generate a 1D synthetic dataset");
  add_common(gen, gen_opts, false);

  auto* tr = app.add_subcommand("train", "train one model (stage 1 + optional stage 2)");
  add_common(tr, train_opts, true);

  auto* run = app.add_subcommand("run", "run a multi-seed experiment end to end");
  add_common(run, run_opts, true);

  auto* ev = app.add_subcommand("eval", "evaluate a saved model checkpoint");
  add_common(ev, eval_opts, true);
  std::string eval_checkpoint;
  double eval_fraction = 0.0;
  ev->add_option("--checkpoint", eval_checkpoint, "model parameter file")->required();
  ev->add_option("--fraction", eval_fraction, "context fraction (default: frac_hi)");

  auto* down = app.add_subcommand("downstream", "frozen-representation transfer heads");
  add_common(down, down_opts, true);
  std::string down_checkpoint, down_task = "amp";
  std::vector<double> down_fractions;
  down->add_option("--checkpoint", down_checkpoint, "model parameter file")->required();
  down->add_option("--task", down_task, "amp | shift | label");
  down->add_option("--fractions", down_fractions, "context fractions to sweep");

  auto* beta = app.add_subcommand("beta-sweep", "stage-2 trade-off coefficient sweep");
  add_common(beta, beta_opts, true);
  std::vector<double> betas;
  beta->add_option("--betas", betas, "beta grid (default 0.1 0.3 0.5 1.0)");

  auto* bench = app.add_subcommand("bench", "stage-1 vs stage-2 per-epoch overhead");
  add_common(bench, bench_opts, true);
  int bench_epochs = 5;
  bench->add_option("--epochs", bench_epochs, "epochs per side (>= 5)");

  app.add_subcommand("gradcheck", "verify analytic gradients against finite differences");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_data(gen_opts);
    if (tr->parsed()) return cmd_train(train_opts);
    if (run->parsed()) return cmd_run(run_opts);
    if (ev->parsed()) return cmd_eval(eval_opts, eval_checkpoint, eval_fraction);
    if (down->parsed()) return cmd_downstream(down_opts, down_checkpoint, down_task, down_fractions);
    if (beta->parsed()) return cmd_beta_sweep(beta_opts, betas);
    if (bench->parsed()) return cmd_bench(bench_opts, bench_epochs);
    return cmd_gradcheck();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
