#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cnpadv/graph.hpp"
#include "cnpadv/rng.hpp"

namespace cnpadv::diff {

/// Fully connected net: affine + ReLU for each hidden size, linear output.
struct MlpSpec {
  int fan_in = 0;
  std::vector<int> hidden;
  int fan_out = 0;
};

class Mlp {
 public:
  Mlp() = default;

  /// Registers weights under `prefix.w0`, `prefix.b0`, ... Weights are
  /// initialized Uniform(-s, s) with s = sqrt(6 / (fan_in + fan_out)),
  /// biases zero.
  static Mlp create(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
                    Rng& rng);

  /// Rebinds to parameters previously created under `prefix` (after a load).
  static Mlp attach(ParamStore& store, const std::string& prefix, const MlpSpec& spec);

  Graph::NodeId apply(Graph& g, Graph::NodeId input) const;

  const MlpSpec& spec() const { return spec_; }
  const std::vector<Parameter*>& weights() const { return w_; }
  const std::vector<Parameter*>& biases() const { return b_; }

 private:
  MlpSpec spec_;
  std::vector<Parameter*> w_;
  std::vector<Parameter*> b_;
};

/// Adam with decoupled weight decay over a fixed parameter list. Moments are
/// kept in list order; t counts completed steps.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::vector<Parameter*> params, AdamConfig cfg);

  /// Decoupled weight decay, then bias-corrected Adam update from each
  /// parameter's current grad. NaN/Inf gradients abort naming the parameter.
  void step();

  long long t() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// Text round-trip of a ParamStore: per parameter its name, shape and
/// row-major values, printed with enough digits to reproduce each double
/// exactly on load.
void save_params(std::ostream& os, const ParamStore& store);
void load_params(std::istream& is, ParamStore& store);  // by name, shapes must match
void save_params_file(const std::string& path, const ParamStore& store);
void load_params_file(const std::string& path, ParamStore& store);

/// Snapshot/restore of parameter values (same store, value copies only).
std::vector<Tensor> snapshot_values(const ParamStore& store);
void restore_values(ParamStore& store, const std::vector<Tensor>& snapshot);

std::string format_double(double v);   // shortest exact round-trip text
double parse_double(const std::string& s);

}  // namespace cnpadv::diff
