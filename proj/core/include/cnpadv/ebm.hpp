#pragma once

#include <cstdint>
#include <vector>

#include "cnpadv/graph.hpp"
#include "cnpadv/nn.hpp"
#include "cnpadv/rng.hpp"

namespace cnpadv::ebm {

using diff::Graph;
using diff::ParamStore;
using diff::Tensor;

struct EbmConfig {
  int d_y = 1;
  std::vector<int> hidden{128};
  bool include_x = false;  // ablation: condition the energy on covariates too
  int d_x = 1;

  void validate() const;
};

/// Energy-based discriminator: log p(y; phi) = -E(y) - c with the log
/// partition absorbed as the trainable scalar c.
class EbmModel {
 public:
  EbmModel(EbmConfig cfg, std::uint64_t seed);

  const EbmConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Per-point log-density (rows x 1). `x` is only consulted when the config
  /// conditions the energy on covariates.
  Graph::NodeId log_prob(Graph& g, Graph::NodeId y, Graph::NodeId x = -1) const;

  /// Value-level counterpart for evaluation paths.
  Tensor log_prob_values(const Tensor& y, const Tensor& x = Tensor()) const;

 private:
  EbmConfig cfg_;
  ParamStore params_;
  diff::Mlp energy_;
  diff::Parameter* log_partition_ = nullptr;
};

/// p(true | y) from the two log-densities, computed stably as
/// sigmoid(log_p_ebm - log_p_cnp).
double posterior_true(double log_p_ebm, double log_p_cnp);

/// Elementwise posterior_true over matching tensors.
Tensor posteriors(const Tensor& log_p_ebm, const Tensor& log_p_cnp);

/// The empirical NCE value (Eq. of the minimax objective): mean log-posterior
/// of true points plus mean log-(1-posterior) of fake points, minus
/// log(K) / (number of summed terms). This is the quantity the EBM ascends;
/// the CNP descends it (through the theta-dependent terms) inside the
/// combined stage-2 loss.
Graph::NodeId nce_objective(Graph& g, Graph::NodeId log_pe_true, Graph::NodeId log_pt_true,
                            Graph::NodeId log_pe_fake, Graph::NodeId log_pt_fake, int k);

/// Value-level NCE objective for analysis and tests.
double nce_objective_value(const Tensor& log_pe_true, const Tensor& log_pt_true,
                           const Tensor& log_pe_fake, const Tensor& log_pt_fake, int k);

/// Fraction of correctly classified points: a true point counts when its
/// posterior exceeds 0.5, a fake point when it is below 0.5; exact ties count
/// as incorrect.
double discriminator_accuracy(const Tensor& posteriors_true_points,
                              const Tensor& posteriors_fake_points);

}  // namespace cnpadv::ebm
