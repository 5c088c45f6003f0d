#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cnpadv/datasets.hpp"
#include "cnpadv/graph.hpp"
#include "cnpadv/nn.hpp"
#include "cnpadv/rng.hpp"

namespace cnpadv::model {

using diff::Graph;
using diff::ParamStore;
using diff::Tensor;

enum class Variant { Cnp, Acnp, Ccnp };
enum class Likelihood { Gaussian, Bernoulli };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(Likelihood l);
Likelihood likelihood_from_string(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::Cnp;
  Likelihood likelihood = Likelihood::Gaussian;
  int d_x = 1;
  int d_y = 1;
  int d_r = 64;
  std::vector<int> encoder_hidden{64, 64};
  std::vector<int> decoder_hidden{64, 64};
  int attn_heads = 8;            // ACNP cross-attention
  bool self_attention = false;   // ACNP context self-attention (identity by default for 1D)
  std::vector<int> projector_hidden{64};  // CCNP
  int projector_out = 64;
  double temperature = 0.1;
  double lambda_contrastive = 1.0;
  int obs_embed = 0;             // 0 = identity observation pre-transform
  double sigma_min = 1e-3;

  void validate() const;
};

/// Per-target sufficient statistics. Gaussian: mu and sigma (>= sigma_min).
/// Bernoulli: mu holds the success probabilities, sigma is empty.
struct PredictiveDist {
  Likelihood family = Likelihood::Gaussian;
  Tensor mu;
  Tensor sigma;
};

enum class SampleMode { ReparamSample, Mean };

/// Draws observations from the predictive distribution. Mean mode returns mu
/// (or p). Gaussian reparam draws mu + sigma*eps. Bernoulli sampling draws
/// hard 0/1 outcomes and carries no gradient path (graph-level training with
/// a Bernoulli likelihood uses mean mode for the fake observations).
Tensor sample_predictions(const PredictiveDist& dist, Rng& rng, SampleMode mode);

/// The CNP family: shared encoder/decoder with a mean-pooling (CNP, CCNP) or
/// cross-attention (ACNP) conditioning path, plus the CCNP contrastive
/// projector. Parameters theta = {encoder, decoder, ...} live in params().
class CnpModel {
 public:
  CnpModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct DistNodes {
    Graph::NodeId mu = -1;      // Gaussian mean
    Graph::NodeId sigma = -1;   // Gaussian scale
    Graph::NodeId logits = -1;  // Bernoulli logits
  };

  struct ForwardNodes {
    Graph::NodeId xc = -1, yc = -1, xt = -1, yt = -1;
    Graph::NodeId repr = -1;  // pooled KxD (CNP/CCNP) or per-point (K*C)xD (ACNP)
    DistNodes dist;
  };

  /// Per-point encodings (groups*C)xd_r of the stacked context, after the
  /// observation pre-transform and optional self-attention.
  Graph::NodeId encode(Graph& g, Graph::NodeId xc, Graph::NodeId yc, int groups) const;

  /// Mean-pooled context representation groups x d_r.
  Graph::NodeId pool(Graph& g, Graph::NodeId encodings, int groups) const;

  /// Predictive parameters for stacked targets ((groups*T)xd_y each).
  /// `repr` is pooled for CNP/CCNP and per-point for ACNP; ACNP additionally
  /// needs the context covariates for its cross-attention keys.
  DistNodes decode(Graph& g, Graph::NodeId xt, Graph::NodeId repr, Graph::NodeId xc,
                   int groups) const;

  /// Per-point log-likelihood (rows x 1), summed over observation features.
  Graph::NodeId log_prob(Graph& g, const DistNodes& dist, Graph::NodeId y) const;

  /// Full conditional forward pass over an episode batch.
  ForwardNodes build_forward(Graph& g, const data::EpisodeTensors& et) const;

  /// l1: negative mean per-point log-likelihood over all K*T targets (Eq. 6
  /// as a loss).
  Graph::NodeId mle_loss(Graph& g, const data::EpisodeTensors& et) const;
  Graph::NodeId mle_loss_from(Graph& g, const ForwardNodes& fwd) const;

  /// CCNP regularizer: split each context into two disjoint halves, mean-pool
  /// and project both, L2-normalize, symmetric InfoNCE across the batch.
  /// The rng overload draws a fresh split per instance; the explicit overload
  /// takes one context-index permutation per instance (first ceil(C/2)
  /// entries form the first half).
  Graph::NodeId contrastive_loss(Graph& g, const data::EpisodeTensors& et, Rng& rng) const;
  Graph::NodeId contrastive_loss(Graph& g, const data::EpisodeTensors& et,
                                 const std::vector<std::vector<int>>& splits) const;

  /// Stage-1 objective: l1, plus lambda * contrastive for CCNP.
  Graph::NodeId stage1_loss(Graph& g, const data::EpisodeTensors& et, Rng& rng) const;

  // --- value-level conveniences ---

  /// r_C for a single context set (C x d) -> 1 x d_r, mean-pooled for every
  /// variant (downstream heads need a fixed-width vector).
  Tensor encode_context(const Tensor& xc, const Tensor& yc) const;

  PredictiveDist predict(const data::EpisodeTensors& et) const;

 private:
  ModelConfig cfg_;
  ParamStore params_;
  diff::Mlp obsnet_;     // affine pre-transform when obs_embed > 0
  diff::Mlp encoder_;
  diff::Mlp embed_;      // ACNP query/key covariate embedding
  diff::Mlp decoder_;
  diff::Mlp projector_;  // CCNP
};

}  // namespace cnpadv::model
