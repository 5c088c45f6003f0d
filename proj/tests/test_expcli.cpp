#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cnpadv/errors.hpp"
#include "cnpadv/experiment.hpp"

using namespace cnpadv;
namespace fs = std::filesystem;

namespace {

std::string micro_spec_text(const std::string& out_dir) {
  return "experiment = micro\n"
         "family = sine\n"
         "n_train = 24\n"
         "n_val = 8\n"
         "n_test = 8\n"
         "n_points = 16\n"
         "variant = cnp\n"
         "adversarial = on\n"
         "seeds = 0\n"
         "out = " + out_dir + "\n"
         "batch_size = 8\n"
         "epochs_stage1 = 2\n"
         "epochs_stage2 = 2\n"
         "frac_lo = 0.2\n"
         "frac_hi = 0.4\n";
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("spec parsing, canonicalization, and hashing") {
  KvConfig kv = KvConfig::parse_text(micro_spec_text("/tmp/x"));
  const exp::ExperimentSpec spec = exp::spec_from_kv(kv);
  kv.finish();
  CHECK(spec.id == "micro");
  CHECK(spec.data.family == "sine");
  CHECK(spec.adversarial);
  CHECK(spec.tc.batch_size == 8);
  CHECK(spec.hash().size() == 16);
  CHECK(spec.hash() == spec.hash());

  exp::ExperimentSpec other = spec;
  other.tc.beta = 0.9;
  CHECK(other.hash() != spec.hash());

  SUBCASE("unknown keys are config errors") {
    KvConfig bad = KvConfig::parse_text(micro_spec_text("/tmp/x") + "bogus_key = 1\n");
    exp::spec_from_kv(bad);
    CHECK_THROWS_AS(bad.finish(), ConfigError);
  }
  SUBCASE("unknown family is a config error") {
    KvConfig bad = KvConfig::parse_text("family = mystery\n");
    CHECK_THROWS_AS(exp::spec_from_kv(bad), ConfigError);
  }
}

TEST_CASE("model architectures per family") {
  const auto sine = exp::make_model_config("sine", model::Variant::Cnp);
  CHECK(sine.d_r == 64);
  CHECK(sine.encoder_hidden == std::vector<int>{64, 64});
  CHECK(sine.decoder_hidden == std::vector<int>{64, 64});
  const auto gp = exp::make_model_config("gp-rbf", model::Variant::Acnp);
  CHECK(gp.d_r == 128);
  CHECK(gp.encoder_hidden == std::vector<int>{128, 128, 128});
  CHECK(gp.decoder_hidden.size() == 5);
  CHECK(gp.attn_heads == 8);
  const auto e = exp::make_ebm_config("sine", false);
  CHECK(e.hidden == std::vector<int>{128});
}

TEST_CASE("build_splits normalizes with train statistics") {
  exp::DatasetSpec ds;
  ds.family = "oscillator";
  ds.n_train = 16;
  ds.n_val = 8;
  ds.n_test = 8;
  ds.n_points = 12;
  const exp::Splits splits = exp::build_splits(ds);
  CHECK(splits.train.normalized);
  CHECK(splits.val.stats.y_mean == splits.train.stats.y_mean);
  CHECK(splits.test.stats.y_std == splits.train.stats.y_std);
  CHECK(splits.train.split == data::Split::Train);
  CHECK(splits.test.split == data::Split::Test);
}

TEST_CASE("eval_test_mse is deterministic") {
  exp::DatasetSpec ds;
  ds.n_train = 16;
  ds.n_val = 8;
  ds.n_test = 8;
  ds.n_points = 16;
  const exp::Splits splits = exp::build_splits(ds);
  model::CnpModel m(exp::make_model_config("sine", model::Variant::Cnp), 1);
  const double a = exp::eval_test_mse(m, splits.test, 0.25, 42);
  const double b = exp::eval_test_mse(m, splits.test, 0.25, 42);
  CHECK(a == b);
  CHECK(std::isfinite(a));
}

TEST_CASE("run_experiment writes metrics, aggregates, and a manifest") {
  const std::string out =
      (fs::temp_directory_path() / "cnpadv_exp_test").string();
  fs::remove_all(out);
  KvConfig kv = KvConfig::parse_text(micro_spec_text(out));
  const exp::ExperimentSpec spec = exp::spec_from_kv(kv);

  const exp::ExperimentResult r1 = exp::run_experiment(spec);
  CHECK(r1.exit_code == 0);
  REQUIRE(r1.seeds.size() == 1);
  CHECK(!r1.seeds[0].failed);
  CHECK(std::isfinite(r1.seeds[0].mse_stage1));
  CHECK(r1.seeds[0].mse_stage2.has_value());

  SUBCASE("csv schemas carry a header and the spec hash") {
    const auto metrics = read_lines(r1.run_dir + "/metrics.csv");
    REQUIRE(metrics.size() >= 3);  // header + stage1 + stage2
    CHECK(metrics[0] ==
          "spec_hash,experiment,family,variant,adversarial,seed,stage,mse,mse_x10");
    CHECK(metrics[1].find(spec.hash()) == 0);
    const auto agg = read_lines(r1.run_dir + "/aggregate.csv");
    REQUIRE(agg.size() >= 3);
    CHECK(agg[0] ==
          "spec_hash,experiment,family,variant,adversarial,stage,n_seeds,mean_mse,std_mse");
  }
  SUBCASE("aggregate rows equal the recomputed mean of per-seed rows") {
    const auto metrics = read_lines(r1.run_dir + "/metrics.csv");
    const auto agg = read_lines(r1.run_dir + "/aggregate.csv");
    // single seed: mean equals the per-seed value, std is zero
    auto field = [](const std::string& line, int idx) {
      std::istringstream is(line);
      std::string tok;
      for (int i = 0; i <= idx; ++i) std::getline(is, tok, ',');
      return tok;
    };
    CHECK(field(agg[1], 7) == field(metrics[1], 7));
    CHECK(std::stod(field(agg[1], 8)) == 0.0);
  }
  SUBCASE("per-seed artifacts exist") {
    const std::string seed_dir = r1.run_dir + "/seed0";
    CHECK(fs::exists(seed_dir + "/model_stage1.txt"));
    CHECK(fs::exists(seed_dir + "/model_stage2.txt"));
    CHECK(fs::exists(seed_dir + "/ebm_stage2.txt"));
    CHECK(fs::exists(seed_dir + "/stage1_batches.csv"));
    CHECK(fs::exists(seed_dir + "/stage2_epochs.csv"));
    const std::string manifest = slurp(r1.run_dir + "/manifest.json");
    CHECK(manifest.find("\"spec_hash\"") != std::string::npos);
    CHECK(manifest.find("mse_stage2") != std::string::npos);
  }
  SUBCASE("rerunning never overwrites: fresh run dir, identical results") {
    const exp::ExperimentResult r2 = exp::run_experiment(spec);
    CHECK(r2.run_dir != r1.run_dir);
    CHECK(fs::exists(r1.run_dir + "/metrics.csv"));
    CHECK(slurp(r2.run_dir + "/metrics.csv") == slurp(r1.run_dir + "/metrics.csv"));
  }
  fs::remove_all(out);
}

TEST_CASE("beta sweep shares stage 1 and emits one row per (beta, seed)") {
  const std::string out =
      (fs::temp_directory_path() / "cnpadv_beta_test").string();
  fs::remove_all(out);
  KvConfig kv = KvConfig::parse_text(micro_spec_text(out));
  exp::ExperimentSpec spec = exp::spec_from_kv(kv);
  spec.seeds = {0, 1};

  const exp::BetaSweepResult r = exp::run_beta_sweep(spec, {0.0, 0.5});
  CHECK(r.exit_code == 0);
  REQUIRE(r.rows.size() == 4);
  const auto lines = read_lines(r.run_dir + "/beta_sweep.csv");
  CHECK(lines[0] == "spec_hash,experiment,family,variant,beta,seed,mse,mse_x10,failed");
  CHECK(lines.size() == 5);

  SUBCASE("non-adversarial spec is rejected") {
    exp::ExperimentSpec off = spec;
    off.adversarial = false;
    CHECK_THROWS_AS(exp::run_beta_sweep(off, {0.1}), ConfigError);
  }
  fs::remove_all(out);
}

TEST_CASE("overhead bench reports a ratio") {
  const std::string out =
      (fs::temp_directory_path() / "cnpadv_bench_test").string();
  fs::remove_all(out);
  KvConfig kv = KvConfig::parse_text(micro_spec_text(out));
  const exp::ExperimentSpec spec = exp::spec_from_kv(kv);
  const exp::OverheadReport report = exp::run_overhead_bench(spec, 5);
  CHECK(report.stage1_epoch_seconds.size() == 5);
  CHECK(report.stage2_epoch_seconds.size() == 5);
  CHECK(report.stage1_median > 0.0);
  CHECK(report.ratio > 0.0);
  fs::remove_all(out);
}
