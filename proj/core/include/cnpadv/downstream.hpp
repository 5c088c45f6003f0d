#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnpadv/cnp.hpp"
#include "cnpadv/datasets.hpp"

namespace cnpadv::downstream {

using diff::Graph;
using diff::ParamStore;
using diff::Tensor;

/// Small supervised head over the frozen context representation:
/// one hidden layer, linear output (regression) or logits (classification).
struct HeadConfig {
  int d_r = 64;
  int d_out = 1;
  int hidden = 128;
  bool classification = false;
};

class Head {
 public:
  Head(HeadConfig cfg, std::uint64_t seed);

  const HeadConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  Graph::NodeId apply(Graph& g, Graph::NodeId repr) const;
  Tensor predict(const Tensor& repr) const;

 private:
  HeadConfig cfg_;
  ParamStore params_;
  diff::Mlp net_;
};

/// r_C from a frozen model for one context set; mean-pooled per-point
/// encodings so every variant yields a fixed-width vector. No gradient
/// touches the CNP parameters.
Tensor extract_repr(const model::CnpModel& frozen, const Tensor& xc, const Tensor& yc);

struct HeadTrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 5e-4;
  double weight_decay = 6e-5;
  double context_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string target = "a";  // gen_param name, or "label" for classification
};

struct HeadTrainResult {
  std::vector<double> epoch_loss;
};

/// Supervised training of the head only; the backing CNP parameters are never
/// touched. Contexts are resampled per epoch at the configured fraction.
HeadTrainResult train_head(Head& head, const model::CnpModel& frozen,
                           const data::MetaDataset& ds, const HeadTrainConfig& cfg);

/// MSE (regression) or accuracy (classification) over the dataset with
/// contexts drawn at the given fraction.
double eval_head(const Head& head, const model::CnpModel& frozen,
                 const data::MetaDataset& ds, double context_fraction,
                 const std::string& target, std::uint64_t seed);

}  // namespace cnpadv::downstream
