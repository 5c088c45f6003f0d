#include "cnpadv/ebm.hpp"

#include <cmath>

#include "cnpadv/errors.hpp"

namespace cnpadv::ebm {

void EbmConfig::validate() const {
  if (d_y < 1) throw ConfigError("ebm d_y must be positive");
  if (include_x && d_x < 1) throw ConfigError("ebm d_x must be positive");
}

EbmModel::EbmModel(EbmConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int fan_in = cfg_.include_x ? cfg_.d_y + cfg_.d_x : cfg_.d_y;
  energy_ = diff::Mlp::create(params_, "energy", {fan_in, cfg_.hidden, 1}, rng);
  log_partition_ = &params_.add("log_partition", Tensor::scalar(0.0));
}

Graph::NodeId EbmModel::log_prob(Graph& g, Graph::NodeId y, Graph::NodeId x) const {
  Graph::NodeId input = y;
  if (cfg_.include_x) {
    if (x < 0) throw UsageError("ebm configured with include_x but no covariates given");
    input = g.concat_cols(x, y);
  }
  const Graph::NodeId energy = energy_.apply(g, input);
  return g.neg(g.add_row(energy, g.param(*log_partition_)));
}

Tensor EbmModel::log_prob_values(const Tensor& y, const Tensor& x) const {
  Graph g;
  const Graph::NodeId yn = g.constant(y);
  const Graph::NodeId xn = cfg_.include_x ? g.constant(x) : -1;
  return g.value(log_prob(g, yn, xn));
}

double posterior_true(double log_p_ebm, double log_p_cnp) {
  return diff::stable_sigmoid(log_p_ebm - log_p_cnp);
}

Tensor posteriors(const Tensor& log_p_ebm, const Tensor& log_p_cnp) {
  if (!log_p_ebm.same_shape(log_p_cnp)) {
    throw ShapeError("posteriors: shapes " + log_p_ebm.shape_str() + " and " +
                     log_p_cnp.shape_str() + " differ");
  }
  Tensor out = log_p_ebm;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = posterior_true(log_p_ebm[i], log_p_cnp[i]);
  }
  return out;
}

Graph::NodeId nce_objective(Graph& g, Graph::NodeId log_pe_true, Graph::NodeId log_pt_true,
                            Graph::NodeId log_pe_fake, Graph::NodeId log_pt_fake, int k) {
  const std::int64_t n_true = g.value(log_pe_true).size();
  const std::int64_t n_fake = g.value(log_pe_fake).size();
  if (n_true == 0 || n_fake == 0) {
    throw UsageError("nce_objective: both a true and a fake side are required");
  }
  if (k < 1) throw UsageError("nce_objective: k must be >= 1");
  // log sigmoid(d) = -softplus(-d)
  const Graph::NodeId delta_true = g.sub(log_pe_true, log_pt_true);
  const Graph::NodeId term_true = g.mean_all(g.neg(g.softplus(g.neg(delta_true))));
  const Graph::NodeId delta_fake = g.sub(log_pe_fake, log_pt_fake);
  const Graph::NodeId term_fake = g.mean_all(g.neg(g.softplus(delta_fake)));
  const double constant = -std::log(static_cast<double>(k)) /
                          static_cast<double>(n_true + n_fake);
  return g.add_scalar(g.add(term_true, term_fake), constant);
}

double nce_objective_value(const Tensor& log_pe_true, const Tensor& log_pt_true,
                           const Tensor& log_pe_fake, const Tensor& log_pt_fake, int k) {
  Graph g;
  const Graph::NodeId node =
      nce_objective(g, g.constant(log_pe_true), g.constant(log_pt_true),
                    g.constant(log_pe_fake), g.constant(log_pt_fake), k);
  return g.value(node)[0];
}

double discriminator_accuracy(const Tensor& posteriors_true_points,
                              const Tensor& posteriors_fake_points) {
  const std::int64_t n = posteriors_true_points.size() + posteriors_fake_points.size();
  if (n == 0) throw UsageError("discriminator_accuracy: empty batch");
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < posteriors_true_points.size(); ++i) {
    if (posteriors_true_points[i] > 0.5) ++correct;
  }
  for (std::int64_t i = 0; i < posteriors_fake_points.size(); ++i) {
    if (posteriors_fake_points[i] < 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace cnpadv::ebm
