#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cnpadv/downstream.hpp"
#include "cnpadv/errors.hpp"
#include "cnpadv/nn.hpp"

using namespace cnpadv;
using diff::Tensor;

namespace {

model::CnpModel make_frozen_model() {
  model::ModelConfig cfg;
  cfg.d_r = 16;
  cfg.encoder_hidden = {16};
  cfg.decoder_hidden = {16};
  return model::CnpModel(cfg, 99);
}

data::MetaDataset labeled_dataset(int n, std::uint64_t seed) {
  data::MetaDataset ds = data::normalize(data::gen_oscillator(n, 20, seed));
  Rng rng(seed ^ 0xabcll);
  for (auto& inst : ds.instances) inst.label = rng.uniform_int(2);
  return ds;
}

}  // namespace

TEST_CASE("extract_repr") {
  const model::CnpModel m = make_frozen_model();
  Rng rng(4);
  Tensor xc = Tensor::zeros(6, 1), yc = Tensor::zeros(6, 1);
  for (int i = 0; i < 6; ++i) {
    xc[i] = rng.uniform(-1.0, 1.0);
    yc[i] = rng.normal();
  }
  SUBCASE("same context twice gives identical representations") {
    const Tensor a = downstream::extract_repr(m, xc, yc);
    const Tensor b = downstream::extract_repr(m, xc, yc);
    CHECK(a == b);
  }
  SUBCASE("permuted context gives the same representation within 1e-10") {
    Tensor xp = Tensor::zeros(6, 1), yp = Tensor::zeros(6, 1);
    const int perm[6] = {5, 3, 0, 4, 1, 2};
    for (int i = 0; i < 6; ++i) {
      xp[i] = xc[perm[i]];
      yp[i] = yc[perm[i]];
    }
    const Tensor a = downstream::extract_repr(m, xc, yc);
    const Tensor b = downstream::extract_repr(m, xp, yp);
    for (int d = 0; d < a.cols(); ++d) CHECK(std::abs(a[d] - b[d]) < 1e-10);
  }
  SUBCASE("different context fractions generally differ") {
    const Tensor small_ctx = downstream::extract_repr(
        m, Tensor::matrix(2, 1, {xc[0], xc[1]}), Tensor::matrix(2, 1, {yc[0], yc[1]}));
    const Tensor full_ctx = downstream::extract_repr(m, xc, yc);
    bool any_diff = false;
    for (int d = 0; d < small_ctx.cols(); ++d) {
      if (small_ctx[d] != full_ctx[d]) any_diff = true;
    }
    CHECK(any_diff);
  }
}

TEST_CASE("head training") {
  const model::CnpModel frozen = make_frozen_model();
  data::MetaDataset ds = labeled_dataset(64, 5);

  SUBCASE("cnp parameters are bitwise identical before and after head training") {
    const std::vector<Tensor> before = diff::snapshot_values(frozen.params());
    downstream::Head head({16, 1, 32, false}, 1);
    downstream::HeadTrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.target = "a";
    downstream::train_head(head, frozen, ds, cfg);
    std::size_t i = 0;
    for (const auto& p : frozen.params()) CHECK(p.value == before[i++]);
  }
  SUBCASE("constant targets converge to near-zero mse") {
    data::MetaDataset flat = ds;
    for (auto& inst : flat.instances) inst.gen_params["a"] = 0.0;
    downstream::Head head({16, 1, 32, false}, 2);
    downstream::HeadTrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.target = "a";
    cfg.seed = 3;
    downstream::train_head(head, frozen, flat, cfg);
    const double mse = downstream::eval_head(head, frozen, flat, 0.2, "a", 7);
    CHECK(mse < 1e-3);
  }
  SUBCASE("training loss is non-increasing in trend") {
    downstream::Head head({16, 1, 32, false}, 4);
    downstream::HeadTrainConfig cfg;
    cfg.epochs = 12;
    cfg.batch_size = 16;
    cfg.target = "a";
    const auto result = downstream::train_head(head, frozen, ds, cfg);
    REQUIRE(result.epoch_loss.size() == 12);
    const double head_avg =
        (result.epoch_loss[0] + result.epoch_loss[1] + result.epoch_loss[2]) / 3.0;
    const double tail_avg = (result.epoch_loss[9] + result.epoch_loss[10] +
                             result.epoch_loss[11]) / 3.0;
    CHECK(tail_avg <= head_avg);
  }
  SUBCASE("classification with an untrained head is chance level on 400 samples") {
    const data::MetaDataset big = labeled_dataset(400, 11);
    downstream::Head head({16, 2, 32, true}, 5);
    const double acc = downstream::eval_head(head, frozen, big, 0.3, "label", 13);
    CHECK(std::abs(acc - 0.5) < 0.05);  // binomial: 2 sigma ~= 0.05
  }
  SUBCASE("evaluation is deterministic under a fixed seed") {
    downstream::Head head({16, 1, 32, false}, 6);
    const double a = downstream::eval_head(head, frozen, ds, 0.4, "a", 21);
    const double b = downstream::eval_head(head, frozen, ds, 0.4, "a", 21);
    CHECK(a == b);
  }
  SUBCASE("missing labels or parameters raise a dataset error") {
    downstream::Head head({16, 1, 32, false}, 7);
    downstream::HeadTrainConfig cfg;
    cfg.target = "no_such_param";
    CHECK_THROWS_AS(downstream::train_head(head, frozen, ds, cfg), DataError);
    data::MetaDataset unlabeled = ds;
    for (auto& inst : unlabeled.instances) inst.label.reset();
    downstream::Head chead({16, 2, 32, true}, 8);
    CHECK_THROWS_AS(downstream::eval_head(chead, frozen, unlabeled, 0.2, "label", 1),
                    DataError);
  }
}

TEST_CASE("classification head learns separable labels") {
  // label = sign of the oscillator amplitude: linearly recoverable from r_C
  const model::CnpModel frozen = make_frozen_model();
  data::MetaDataset ds = data::normalize(data::gen_oscillator(128, 20, 17));
  for (auto& inst : ds.instances) inst.label = inst.gen_params.at("a") > 0.0 ? 1 : 0;
  downstream::Head head({16, 2, 32, true}, 9);
  downstream::HeadTrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 16;
  cfg.context_fraction = 0.6;
  cfg.target = "label";
  downstream::train_head(head, frozen, ds, cfg);
  const double acc = downstream::eval_head(head, frozen, ds, 0.6, "label", 3);
  CHECK(acc > 0.8);
}
