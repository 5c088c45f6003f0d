#include "cnpadv/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "cnpadv/errors.hpp"

namespace fs = std::filesystem;

namespace cnpadv::exp {

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double sample_std(const std::vector<double>& values, double mean) {
  if (values.size() < 2) return 0.0;
  double s = 0.0;
  for (double v : values) s += (v - mean) * (v - mean);
  return std::sqrt(s / static_cast<double>(values.size() - 1));
}

double mean_of(const std::vector<double>& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  return os;
}

}  // namespace

std::string ExperimentSpec::canonical() const {
  KvConfig kv;
  kv.set("experiment", id);
  kv.set("family", data.family);
  kv.set("n_train", std::to_string(data.n_train));
  kv.set("n_val", std::to_string(data.n_val));
  kv.set("n_test", std::to_string(data.n_test));
  kv.set("n_points", std::to_string(data.n_points));
  kv.set("gp_sigma", diff::format_double(data.gp_sigma));
  kv.set("data_seed", std::to_string(data.data_seed));
  kv.set("variant", model::to_string(variant));
  kv.set("adversarial", adversarial ? "on" : "off");
  kv.set("ebm_include_x", ebm_include_x ? "on" : "off");
  std::string seed_list;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (i) seed_list += ",";
    seed_list += std::to_string(seeds[i]);
  }
  kv.set("seeds", seed_list);
  train::train_config_to_kv(tc, kv);
  return kv.canonical();
}

std::string ExperimentSpec::hash() const { return spec_hash(canonical()); }

ExperimentSpec spec_from_kv(KvConfig& kv) {
  ExperimentSpec spec;
  spec.id = kv.get_string("experiment", spec.id);
  spec.data.family = kv.get_string("family", spec.data.family);
  if (spec.data.family != "sine" && spec.data.family != "oscillator" &&
      spec.data.family != "gp-rbf") {
    throw ConfigError("unknown dataset family: " + spec.data.family);
  }
  spec.data.n_train = kv.get_int("n_train", spec.data.n_train);
  spec.data.n_val = kv.get_int("n_val", spec.data.n_val);
  spec.data.n_test = kv.get_int("n_test", spec.data.n_test);
  spec.data.n_points = kv.get_int("n_points", spec.data.n_points);
  spec.data.gp_sigma = kv.get_double("gp_sigma", spec.data.gp_sigma);
  spec.data.data_seed = kv.get_u64("data_seed", spec.data.data_seed);
  spec.variant = model::variant_from_string(kv.get_string("variant", "cnp"));
  spec.adversarial = kv.get_bool("adversarial", spec.adversarial);
  spec.ebm_include_x = kv.get_bool("ebm_include_x", spec.ebm_include_x);
  spec.seeds = kv.get_u64s("seeds", spec.seeds);
  spec.out_dir = kv.get_string("out", spec.out_dir);
  spec.tc = train::train_config_from_kv(kv);
  return spec;
}

model::ModelConfig make_model_config(const std::string& family, model::Variant variant) {
  model::ModelConfig cfg;
  cfg.variant = variant;
  cfg.d_x = 1;
  cfg.d_y = 1;
  if (family == "gp-rbf") {
    cfg.d_r = 128;
    cfg.encoder_hidden = {128, 128, 128};
    cfg.decoder_hidden = {128, 128, 128, 128, 128};
    cfg.projector_hidden = {64};
    cfg.projector_out = 64;
  } else {
    cfg.d_r = 64;
    cfg.encoder_hidden = {64, 64};
    cfg.decoder_hidden = {64, 64};
    cfg.projector_hidden = {64};
    cfg.projector_out = 64;
  }
  cfg.attn_heads = 8;
  return cfg;
}

ebm::EbmConfig make_ebm_config(const std::string& family, bool include_x) {
  ebm::EbmConfig cfg;
  cfg.d_y = 1;
  cfg.hidden = {128};
  cfg.include_x = include_x;
  cfg.d_x = 1;
  (void)family;
  return cfg;
}

Splits build_splits(const DatasetSpec& spec) {
  auto generate = [&](int n, std::uint64_t seed) {
    if (spec.family == "sine") return data::gen_sine(n, spec.n_points, seed);
    if (spec.family == "oscillator") return data::gen_oscillator(n, spec.n_points, seed);
    if (spec.family == "gp-rbf") {
      return data::gen_gp_rbf(n, spec.n_points, spec.gp_sigma, seed);
    }
    throw ConfigError("unknown dataset family: " + spec.family);
  };
  Splits splits;
  splits.train = generate(spec.n_train, spec.data_seed);
  splits.train.split = data::Split::Train;
  splits.val = generate(spec.n_val, spec.data_seed + 1);
  splits.val.split = data::Split::Validation;
  splits.test = generate(spec.n_test, spec.data_seed + 2);
  splits.test.split = data::Split::Test;
  const data::NormStats stats = data::compute_norm_stats(splits.train);
  splits.train = data::normalize(splits.train, stats);
  splits.val = data::normalize(splits.val, stats);
  splits.test = data::normalize(splits.test, stats);
  return splits;
}

double eval_test_mse(const model::CnpModel& model, const data::MetaDataset& test,
                     double fraction, std::uint64_t seed) {
  Rng rng(seed);
  const int chunk = std::min(128, test.size());
  double total = 0.0;
  std::int64_t count = 0;
  std::vector<int> ids(static_cast<std::size_t>(test.size()));
  for (int i = 0; i < test.size(); ++i) ids[static_cast<std::size_t>(i)] = i;
  for (int start = 0; start < test.size(); start += chunk) {
    const int k = std::min(chunk, test.size() - start);
    const data::EpisodeBatch episode = data::make_episode_for(
        test, std::span<const int>(ids.data() + start, static_cast<std::size_t>(k)),
        fraction, fraction, rng);
    const data::EpisodeTensors et = data::gather(test, episode);
    const model::PredictiveDist dist = model.predict(et);
    for (std::int64_t i = 0; i < et.yt.size(); ++i) {
      const double e = dist.mu[i] - et.yt[i];
      total += e * e;
    }
    count += et.yt.size();
  }
  return total / static_cast<double>(count);
}

std::string make_run_dir(const std::string& out_dir, const std::string& id) {
  const fs::path base = fs::path(out_dir) / id;
  fs::create_directories(base);
  for (int n = 1; n < 100000; ++n) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "run-%03d", n);
    const fs::path candidate = base / buf;
    if (!fs::exists(candidate)) {
      fs::create_directories(candidate);
      return candidate.string();
    }
  }
  throw DataError("run directory space exhausted under " + base.string());
}

void write_history_csv(const std::string& dir, const train::History& history,
                       const std::string& spec_hash_value, const std::string& prefix) {
  {
    auto os = open_out(dir + "/" + prefix + "_batches.csv");
    os << "spec_hash,stage,epoch,batch,l1,l2,combined,ebm_acc,side\n";
    for (const auto& b : history.batches) {
      os << spec_hash_value << "," << b.stage << "," << b.epoch << "," << b.batch << ","
         << diff::format_double(b.l1) << ",";
      if (b.l2) os << diff::format_double(*b.l2);
      os << "," << diff::format_double(b.combined) << ",";
      if (b.ebm_acc) os << diff::format_double(*b.ebm_acc);
      os << ",";
      if (b.side) os << to_string(*b.side);
      os << "\n";
    }
  }
  {
    auto os = open_out(dir + "/" + prefix + "_epochs.csv");
    os << "spec_hash,stage,epoch,val_l1,improved,seconds\n";
    for (const auto& e : history.epochs) {
      os << spec_hash_value << "," << e.stage << "," << e.epoch << ","
         << diff::format_double(e.val_l1) << "," << (e.improved ? 1 : 0) << ","
         << diff::format_double(e.seconds) << "\n";
    }
  }
}

namespace {

/// Shared per-seed pipeline; returns the outcome and writes checkpoints and
/// training logs under run_dir/seed<seed>/.
SeedOutcome run_seed(const ExperimentSpec& spec, const Splits& splits, std::uint64_t seed,
                     const std::string& run_dir) {
  SeedOutcome outcome;
  outcome.seed = seed;
  const std::string seed_dir = run_dir + "/seed" + std::to_string(seed);
  fs::create_directories(seed_dir);
  const std::string hash = spec.hash();
  try {
    model::CnpModel model(make_model_config(spec.data.family, spec.variant), seed);
    train::TrainConfig tc = spec.tc;
    tc.seed = seed;

    const train::StageResult s1 =
        train::train_stage1(model, splits.train, splits.val, tc);
    outcome.stage1_epochs = s1.epochs_run;
    outcome.mse_stage1 = eval_test_mse(model, splits.test, tc.frac_hi, seed ^ 0xe7a1ull);
    outcome.ckpt_stage1 = seed_dir + "/model_stage1.txt";
    diff::save_params_file(outcome.ckpt_stage1, model.params());
    write_history_csv(seed_dir, s1.history, hash, "stage1");
    if (s1.history.aborted) {
      throw TrainError("stage 1 aborted: " + s1.history.abort_reason);
    }

    if (spec.adversarial) {
      // The EBM is always initialized fresh from the run seed; a stage-1
      // checkpoint carries no EBM parameters.
      ebm::EbmModel ebm_model(make_ebm_config(spec.data.family, spec.ebm_include_x),
                              seed ^ 0xeb0000ull);
      const train::StageResult s2 =
          train::train_stage2(model, ebm_model, splits.train, splits.val, tc);
      outcome.stage2_epochs = s2.epochs_run;
      outcome.mse_stage2 = eval_test_mse(model, splits.test, tc.frac_hi, seed ^ 0xe7a2ull);
      outcome.ckpt_stage2 = seed_dir + "/model_stage2.txt";
      diff::save_params_file(outcome.ckpt_stage2, model.params());
      diff::save_params_file(seed_dir + "/ebm_stage2.txt", ebm_model.params());
      write_history_csv(seed_dir, s2.history, hash, "stage2");
    }
  } catch (const std::exception& e) {
    outcome.failed = true;
    outcome.error = e.what();
  }
  return outcome;
}

nlohmann::json outcome_json(const SeedOutcome& o) {
  nlohmann::json j;
  j["seed"] = o.seed;
  j["failed"] = o.failed;
  if (o.failed) {
    j["error"] = o.error;
    return j;
  }
  j["mse_stage1"] = o.mse_stage1;
  j["stage1_epochs"] = o.stage1_epochs;
  j["checkpoint_stage1"] = o.ckpt_stage1;
  if (o.mse_stage2) {
    j["mse_stage2"] = *o.mse_stage2;
    j["stage2_epochs"] = o.stage2_epochs;
    j["checkpoint_stage2"] = o.ckpt_stage2;
  }
  return j;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  ExperimentResult result;
  result.run_dir = make_run_dir(spec.out_dir, spec.id);
  const std::string hash = spec.hash();
  const Splits splits = build_splits(spec.data);

  for (const std::uint64_t seed : spec.seeds) {
    result.seeds.push_back(run_seed(spec, splits, seed, result.run_dir));
    if (result.seeds.back().failed) result.exit_code = 1;
  }

  // Per-seed metrics.
  {
    auto os = open_out(result.run_dir + "/metrics.csv");
    os << "spec_hash,experiment,family,variant,adversarial,seed,stage,mse,mse_x10\n";
    for (const auto& o : result.seeds) {
      if (o.failed) continue;
      auto row = [&](int stage, double mse) {
        os << hash << "," << spec.id << "," << spec.data.family << ","
           << model::to_string(spec.variant) << "," << (spec.adversarial ? "on" : "off")
           << "," << o.seed << "," << stage << "," << diff::format_double(mse) << ","
           << diff::format_double(mse * 10.0) << "\n";
      };
      row(1, o.mse_stage1);
      if (o.mse_stage2) row(2, *o.mse_stage2);
    }
  }

  // Aggregates.
  {
    std::vector<double> s1, s2;
    for (const auto& o : result.seeds) {
      if (o.failed) continue;
      s1.push_back(o.mse_stage1);
      if (o.mse_stage2) s2.push_back(*o.mse_stage2);
    }
    auto os = open_out(result.run_dir + "/aggregate.csv");
    os << "spec_hash,experiment,family,variant,adversarial,stage,n_seeds,mean_mse,std_mse\n";
    auto row = [&](int stage, const std::vector<double>& v) {
      if (v.empty()) return;
      const double m = mean_of(v);
      os << hash << "," << spec.id << "," << spec.data.family << ","
         << model::to_string(spec.variant) << "," << (spec.adversarial ? "on" : "off") << ","
         << stage << "," << v.size() << "," << diff::format_double(m) << ","
         << diff::format_double(sample_std(v, m)) << "\n";
    };
    row(1, s1);
    row(2, s2);
  }

  // Manifest.
  {
    nlohmann::json manifest;
    manifest["spec_hash"] = hash;
    manifest["spec"] = spec.canonical();
    manifest["run_dir"] = result.run_dir;
    manifest["exit_code"] = result.exit_code;
    manifest["seeds"] = nlohmann::json::array();
    for (const auto& o : result.seeds) manifest["seeds"].push_back(outcome_json(o));
    auto os = open_out(result.run_dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
  }
  return result;
}

BetaSweepResult run_beta_sweep(const ExperimentSpec& spec, const std::vector<double>& betas) {
  if (!spec.adversarial) throw ConfigError("beta sweep requires adversarial = on");
  if (betas.empty()) throw ConfigError("beta sweep needs at least one beta");
  BetaSweepResult result;
  result.run_dir = make_run_dir(spec.out_dir, spec.id + "-beta");
  const std::string hash = spec.hash();
  const Splits splits = build_splits(spec.data);

  for (const std::uint64_t seed : spec.seeds) {
    // One shared stage-1 model per seed.
    model::CnpModel model(make_model_config(spec.data.family, spec.variant), seed);
    train::TrainConfig tc = spec.tc;
    tc.seed = seed;
    try {
      train::train_stage1(model, splits.train, splits.val, tc);
    } catch (const std::exception& e) {
      for (const double beta : betas) {
        result.rows.push_back({beta, seed, 0.0, true, e.what()});
      }
      result.exit_code = 1;
      continue;
    }
    const std::vector<diff::Tensor> stage1_snapshot = diff::snapshot_values(model.params());

    for (std::size_t bi = 0; bi < betas.size(); ++bi) {
      BetaOutcome row;
      row.beta = betas[bi];
      row.seed = seed;
      try {
        diff::restore_values(model.params(), stage1_snapshot);
        ebm::EbmModel ebm_model(make_ebm_config(spec.data.family, spec.ebm_include_x),
                                seed ^ (0xbe7a00ull + bi));
        train::TrainConfig tc_beta = tc;
        tc_beta.beta = betas[bi];
        train::train_stage2(model, ebm_model, splits.train, splits.val, tc_beta);
        row.mse = eval_test_mse(model, splits.test, tc.frac_hi, seed ^ 0xe7a2ull);
      } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
        result.exit_code = 1;
      }
      result.rows.push_back(row);
    }
  }

  auto os = open_out(result.run_dir + "/beta_sweep.csv");
  os << "spec_hash,experiment,family,variant,beta,seed,mse,mse_x10,failed\n";
  for (const auto& row : result.rows) {
    os << hash << "," << spec.id << "," << spec.data.family << ","
       << model::to_string(spec.variant) << "," << diff::format_double(row.beta) << ","
       << row.seed << "," << diff::format_double(row.mse) << ","
       << diff::format_double(row.mse * 10.0) << "," << (row.failed ? 1 : 0) << "\n";
  }
  return result;
}

OverheadReport run_overhead_bench(const ExperimentSpec& spec, int epochs) {
  if (epochs < 5) epochs = 5;
  const Splits splits = build_splits(spec.data);
  const std::uint64_t seed = spec.seeds.empty() ? 0 : spec.seeds.front();

  model::CnpModel model(make_model_config(spec.data.family, spec.variant), seed);
  train::TrainConfig tc = spec.tc;
  tc.seed = seed;
  tc.patience = 1 << 20;  // timing run: no early stop

  OverheadReport report;
  {
    train::Trainer trainer(1, model, nullptr, splits.train, splits.val, tc);
    const train::StageResult r = trainer.run(epochs);
    for (const auto& e : r.history.epochs) report.stage1_epoch_seconds.push_back(e.seconds);
  }
  {
    ebm::EbmModel ebm_model(make_ebm_config(spec.data.family, spec.ebm_include_x),
                            seed ^ 0xeb0000ull);
    train::Trainer trainer(2, model, &ebm_model, splits.train, splits.val, tc);
    const train::StageResult r = trainer.run(epochs);
    for (const auto& e : r.history.epochs) report.stage2_epoch_seconds.push_back(e.seconds);
  }
  report.stage1_median = median(report.stage1_epoch_seconds);
  report.stage2_median = median(report.stage2_epoch_seconds);
  report.ratio = report.stage1_median > 0.0 ? report.stage2_median / report.stage1_median : 0.0;
  return report;
}

}  // namespace cnpadv::exp
