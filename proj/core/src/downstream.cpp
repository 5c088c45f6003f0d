#include "cnpadv/downstream.hpp"

#include <algorithm>
#include <cmath>

#include "cnpadv/errors.hpp"

namespace cnpadv::downstream {

namespace {

double target_value(const data::FunctionInstance& inst, const std::string& target) {
  if (target == "label") {
    if (!inst.label) throw DataError("instance has no label for classification head");
    return static_cast<double>(*inst.label);
  }
  const auto it = inst.gen_params.find(target);
  if (it == inst.gen_params.end()) {
    throw DataError("instance has no generative parameter '" + target + "'");
  }
  return it->second;
}

/// Context rows for one instance at the given fraction.
void gather_context(const data::FunctionInstance& inst, double fraction, Rng& rng,
                    Tensor& xc, Tensor& yc) {
  const int n = inst.x.rows();
  const int c = std::max(1, static_cast<int>(std::floor(fraction * n)));
  const std::vector<int> idx = rng.sample_without_replacement(n, c);
  xc = Tensor::zeros(c, inst.x.cols());
  yc = Tensor::zeros(c, inst.y.cols());
  for (int i = 0; i < c; ++i) {
    for (int d = 0; d < inst.x.cols(); ++d) xc.at(i, d) = inst.x.at(idx[i], d);
    for (int d = 0; d < inst.y.cols(); ++d) yc.at(i, d) = inst.y.at(idx[i], d);
  }
}

}  // namespace

Head::Head(HeadConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.d_r < 1 || cfg_.d_out < 1 || cfg_.hidden < 1) {
    throw ConfigError("head dimensions must be positive");
  }
  Rng rng(seed);
  net_ = diff::Mlp::create(params_, "head", {cfg_.d_r, {cfg_.hidden}, cfg_.d_out}, rng);
}

Graph::NodeId Head::apply(Graph& g, Graph::NodeId repr) const { return net_.apply(g, repr); }

Tensor Head::predict(const Tensor& repr) const {
  Graph g;
  return g.value(apply(g, g.constant(repr)));
}

Tensor extract_repr(const model::CnpModel& frozen, const Tensor& xc, const Tensor& yc) {
  return frozen.encode_context(xc, yc);
}

HeadTrainResult train_head(Head& head, const model::CnpModel& frozen,
                           const data::MetaDataset& ds, const HeadTrainConfig& cfg) {
  if (ds.instances.empty()) throw DataError("head training needs a non-empty dataset");
  Rng rng(cfg.seed);
  diff::AdamState opt(head.params().all(),
                      {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  const int d_r = head.config().d_r;
  const int d_out = head.config().d_out;
  const bool classify = head.config().classification;

  HeadTrainResult result;
  std::vector<int> order(static_cast<std::size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start + cfg.batch_size <= ds.size(); start += cfg.batch_size) {
      const int k = cfg.batch_size;
      Tensor reprs = Tensor::zeros(k, d_r);
      Tensor targets = Tensor::zeros(k, classify ? d_out : 1);
      for (int i = 0; i < k; ++i) {
        const auto& inst = ds.instances[static_cast<std::size_t>(order[start + i])];
        Tensor xc, yc;
        gather_context(inst, cfg.context_fraction, rng, xc, yc);
        const Tensor r = extract_repr(frozen, xc, yc);
        for (int d = 0; d < d_r; ++d) reprs.at(i, d) = r[d];
        const double t = target_value(inst, cfg.target);
        if (classify) {
          const int cls = static_cast<int>(t);
          if (cls < 0 || cls >= d_out) throw DataError("label out of range for head");
          targets.at(i, cls) = 1.0;  // one-hot
        } else {
          targets.at(i, 0) = t;
        }
      }
      diff::Graph g;
      const auto out = head.apply(g, g.constant(reprs));
      diff::Graph::NodeId loss;
      if (classify) {
        const auto logits = out;
        const auto picked = g.sum_cols(g.mul(logits, g.constant(targets)));
        loss = g.mean_all(g.sub(g.log_sum_exp_rows(logits), picked));
      } else {
        loss = g.mean_all(g.square(g.sub(out, g.constant(targets))));
      }
      epoch_loss += g.forward(loss);
      ++batches;
      g.backward(loss);
      opt.step();
    }
    result.epoch_loss.push_back(batches > 0 ? epoch_loss / batches : 0.0);
  }
  return result;
}

double eval_head(const Head& head, const model::CnpModel& frozen,
                 const data::MetaDataset& ds, double context_fraction,
                 const std::string& target, std::uint64_t seed) {
  if (ds.instances.empty()) throw DataError("head evaluation needs a non-empty dataset");
  Rng rng(seed);
  const bool classify = head.config().classification;
  double total = 0.0;
  for (const auto& inst : ds.instances) {
    Tensor xc, yc;
    gather_context(inst, context_fraction, rng, xc, yc);
    const Tensor pred = head.predict(extract_repr(frozen, xc, yc));
    const double t = target_value(inst, target);
    if (classify) {
      int argmax = 0;
      for (int d = 1; d < pred.cols(); ++d) {
        if (pred[d] > pred[argmax]) argmax = d;
      }
      total += argmax == static_cast<int>(t) ? 1.0 : 0.0;
    } else {
      const double e = pred[0] - t;
      total += e * e;
    }
  }
  return total / static_cast<double>(ds.size());
}

}  // namespace cnpadv::downstream
