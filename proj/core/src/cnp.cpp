#include "cnpadv/cnp.hpp"

#include <cmath>
#include <numbers>

#include "cnpadv/errors.hpp"

namespace cnpadv::model {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Cnp: return "cnp";
    case Variant::Acnp: return "acnp";
    case Variant::Ccnp: return "ccnp";
  }
  return "cnp";
}

Variant variant_from_string(const std::string& s) {
  if (s == "cnp" || s == "CNP") return Variant::Cnp;
  if (s == "acnp" || s == "ACNP") return Variant::Acnp;
  if (s == "ccnp" || s == "CCNP") return Variant::Ccnp;
  throw ConfigError("unknown model variant: " + s);
}

std::string to_string(Likelihood l) {
  return l == Likelihood::Gaussian ? "gaussian" : "bernoulli";
}

Likelihood likelihood_from_string(const std::string& s) {
  if (s == "gaussian") return Likelihood::Gaussian;
  if (s == "bernoulli") return Likelihood::Bernoulli;
  throw ConfigError("unknown likelihood: " + s);
}

void ModelConfig::validate() const {
  if (d_x < 1 || d_y < 1 || d_r < 1) throw ConfigError("model dims must be positive");
  if (variant == Variant::Acnp && d_r % attn_heads != 0) {
    throw ConfigError("attention heads must divide d_r");
  }
  if (sigma_min <= 0.0) throw ConfigError("sigma_min must be positive");
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
}

Tensor sample_predictions(const PredictiveDist& dist, Rng& rng, SampleMode mode) {
  if (mode == SampleMode::Mean) return dist.mu;
  Tensor out = dist.mu;
  if (dist.family == Likelihood::Gaussian) {
    for (std::int64_t i = 0; i < out.size(); ++i) {
      out[i] += dist.sigma[i] * rng.normal();
    }
  } else {
    for (std::int64_t i = 0; i < out.size(); ++i) {
      out[i] = rng.uniform() < out[i] ? 1.0 : 0.0;
    }
  }
  return out;
}

CnpModel::CnpModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int obs_width = cfg_.obs_embed > 0 ? cfg_.obs_embed : cfg_.d_y;
  if (cfg_.obs_embed > 0) {
    obsnet_ = diff::Mlp::create(params_, "obsnet", {cfg_.d_y, {}, cfg_.obs_embed}, rng);
  }
  encoder_ = diff::Mlp::create(params_, "encoder",
                               {cfg_.d_x + obs_width, cfg_.encoder_hidden, cfg_.d_r}, rng);
  if (cfg_.variant == Variant::Acnp) {
    embed_ = diff::Mlp::create(params_, "embed", {cfg_.d_x, {cfg_.d_r}, cfg_.d_r}, rng);
  }
  const int out_width = cfg_.likelihood == Likelihood::Gaussian ? 2 * cfg_.d_y : cfg_.d_y;
  decoder_ = diff::Mlp::create(params_, "decoder",
                               {cfg_.d_x + cfg_.d_r, cfg_.decoder_hidden, out_width}, rng);
  if (cfg_.variant == Variant::Ccnp) {
    projector_ = diff::Mlp::create(params_, "projector",
                                   {cfg_.d_r, cfg_.projector_hidden, cfg_.projector_out}, rng);
  }
}

Graph::NodeId CnpModel::encode(Graph& g, Graph::NodeId xc, Graph::NodeId yc,
                               int groups) const {
  if (g.value(xc).rows() == 0 || g.value(xc).rows() < groups) {
    throw UsageError("encode: empty context");
  }
  Graph::NodeId obs = yc;
  if (cfg_.obs_embed > 0) obs = obsnet_.apply(g, yc);
  Graph::NodeId enc = encoder_.apply(g, g.concat_cols(xc, obs));
  if (cfg_.variant == Variant::Acnp && cfg_.self_attention) {
    enc = g.attention(enc, enc, enc, cfg_.attn_heads, groups);
  }
  return enc;
}

Graph::NodeId CnpModel::pool(Graph& g, Graph::NodeId encodings, int groups) const {
  const int rows = g.value(encodings).rows();
  if (groups < 1 || rows % groups != 0) throw UsageError("pool: bad group count");
  return g.group_mean_rows(encodings, rows / groups);
}

CnpModel::DistNodes CnpModel::decode(Graph& g, Graph::NodeId xt, Graph::NodeId repr,
                                     Graph::NodeId xc, int groups) const {
  const int total_t = g.value(xt).rows();
  if (total_t % groups != 0) throw UsageError("decode: target rows not divisible by groups");
  const int t = total_t / groups;

  Graph::NodeId cond;
  if (cfg_.variant == Variant::Acnp) {
    if (g.value(repr).rows() != g.value(xc).rows()) {
      throw UsageError("decode: ACNP needs per-point encodings as repr");
    }
    const Graph::NodeId queries = embed_.apply(g, xt);
    const Graph::NodeId keys = embed_.apply(g, xc);
    cond = g.attention(queries, keys, repr, cfg_.attn_heads, groups);
  } else {
    if (g.value(repr).rows() != groups) {
      throw UsageError("decode: pooled repr rows " + std::to_string(g.value(repr).rows()) +
                       " do not match groups " + std::to_string(groups));
    }
    cond = g.repeat_rows(repr, t);
  }

  const Graph::NodeId out = decoder_.apply(g, g.concat_cols(xt, cond));
  DistNodes dist;
  if (cfg_.likelihood == Likelihood::Gaussian) {
    dist.mu = g.slice_cols(out, 0, cfg_.d_y);
    const Graph::NodeId raw = g.slice_cols(out, cfg_.d_y, 2 * cfg_.d_y);
    dist.sigma = g.add_scalar(g.softplus(raw), cfg_.sigma_min);
  } else {
    dist.logits = out;
  }
  return dist;
}

Graph::NodeId CnpModel::log_prob(Graph& g, const DistNodes& dist, Graph::NodeId y) const {
  if (cfg_.likelihood == Likelihood::Gaussian) {
    const Graph::NodeId diff = g.sub(y, dist.mu);
    const Graph::NodeId quad = g.div(g.square(diff), g.scale(g.square(dist.sigma), 2.0));
    Graph::NodeId ll = g.sub(g.neg(quad), g.log(dist.sigma));
    ll = g.add_scalar(ll, -0.5 * std::log(2.0 * std::numbers::pi));
    return g.sum_cols(ll);
  }
  const Tensor& yv = g.value(y);
  for (std::int64_t i = 0; i < yv.size(); ++i) {
    if (yv[i] < 0.0 || yv[i] > 1.0) {
      throw DataError("bernoulli log_prob: observation outside [0,1]");
    }
  }
  // y*z - softplus(z), stable for logits z
  const Graph::NodeId ll = g.sub(g.mul(y, dist.logits), g.softplus(dist.logits));
  return g.sum_cols(ll);
}

CnpModel::ForwardNodes CnpModel::build_forward(Graph& g, const data::EpisodeTensors& et) const {
  ForwardNodes fwd;
  fwd.xc = g.constant(et.xc);
  fwd.yc = g.constant(et.yc);
  fwd.xt = g.constant(et.xt);
  fwd.yt = g.constant(et.yt);
  const Graph::NodeId enc = encode(g, fwd.xc, fwd.yc, et.k);
  fwd.repr = cfg_.variant == Variant::Acnp ? enc : pool(g, enc, et.k);
  fwd.dist = decode(g, fwd.xt, fwd.repr, fwd.xc, et.k);
  return fwd;
}

Graph::NodeId CnpModel::mle_loss_from(Graph& g, const ForwardNodes& fwd) const {
  return g.neg(g.mean_all(log_prob(g, fwd.dist, fwd.yt)));
}

Graph::NodeId CnpModel::mle_loss(Graph& g, const data::EpisodeTensors& et) const {
  const ForwardNodes fwd = build_forward(g, et);
  return mle_loss_from(g, fwd);
}

Graph::NodeId CnpModel::contrastive_loss(Graph& g, const data::EpisodeTensors& et,
                                         Rng& rng) const {
  if (et.c < 2) throw UsageError("contrastive loss needs >= 2 context points per instance");
  std::vector<std::vector<int>> splits(static_cast<std::size_t>(et.k));
  for (auto& order : splits) {
    order.resize(static_cast<std::size_t>(et.c));
    for (int i = 0; i < et.c; ++i) order[static_cast<std::size_t>(i)] = i;
    rng.shuffle(order);
  }
  return contrastive_loss(g, et, splits);
}

Graph::NodeId CnpModel::contrastive_loss(Graph& g, const data::EpisodeTensors& et,
                                         const std::vector<std::vector<int>>& splits) const {
  if (cfg_.variant != Variant::Ccnp) {
    throw UsageError("contrastive loss requires the CCNP variant");
  }
  if (et.k < 2) throw UsageError("contrastive loss needs K >= 2 (no negatives otherwise)");
  if (et.c < 2) throw UsageError("contrastive loss needs >= 2 context points per instance");
  if (splits.size() != static_cast<std::size_t>(et.k)) {
    throw UsageError("contrastive loss needs one split per instance");
  }

  const int ca = (et.c + 1) / 2;
  const int cb = et.c - ca;
  const int dx = et.xc.cols(), dy = et.yc.cols();
  Tensor xa = Tensor::zeros(et.k * ca, dx), ya = Tensor::zeros(et.k * ca, dy);
  Tensor xb = Tensor::zeros(et.k * cb, dx), yb = Tensor::zeros(et.k * cb, dy);
  for (int ki = 0; ki < et.k; ++ki) {
    const std::vector<int>& order = splits[static_cast<std::size_t>(ki)];
    if (order.size() != static_cast<std::size_t>(et.c)) {
      throw UsageError("contrastive split has wrong length");
    }
    for (int i = 0; i < et.c; ++i) {
      const int src = ki * et.c + order[static_cast<std::size_t>(i)];
      if (i < ca) {
        const int dst = ki * ca + i;
        for (int d = 0; d < dx; ++d) xa.at(dst, d) = et.xc.at(src, d);
        for (int d = 0; d < dy; ++d) ya.at(dst, d) = et.yc.at(src, d);
      } else {
        const int dst = ki * cb + (i - ca);
        for (int d = 0; d < dx; ++d) xb.at(dst, d) = et.xc.at(src, d);
        for (int d = 0; d < dy; ++d) yb.at(dst, d) = et.yc.at(src, d);
      }
    }
  }

  auto project = [&](const Tensor& x, const Tensor& y, int group) {
    const Graph::NodeId enc = encode(g, g.constant(x), g.constant(y), et.k);
    const Graph::NodeId pooled = g.group_mean_rows(enc, group);
    const Graph::NodeId z = projector_.apply(g, pooled);
    const Graph::NodeId norm = g.sqrt(g.add_scalar(g.sum_cols(g.square(z)), 1e-12));
    return g.div(z, g.repeat_cols(norm, cfg_.projector_out));
  };
  const Graph::NodeId za = project(xa, ya, ca);
  const Graph::NodeId zb = project(xb, yb, cb);

  const Graph::NodeId sim = g.scale(g.matmul(za, g.transpose(zb)), 1.0 / cfg_.temperature);
  auto info_nce = [&](Graph::NodeId s) {
    return g.mean_all(g.sub(g.log_sum_exp_rows(s), g.take_diag(s)));
  };
  return g.scale(g.add(info_nce(sim), info_nce(g.transpose(sim))), 0.5);
}

Graph::NodeId CnpModel::stage1_loss(Graph& g, const data::EpisodeTensors& et, Rng& rng) const {
  const Graph::NodeId nll = mle_loss(g, et);
  if (cfg_.variant != Variant::Ccnp) return nll;
  const Graph::NodeId reg = contrastive_loss(g, et, rng);
  return g.add(nll, g.scale(reg, cfg_.lambda_contrastive));
}

Tensor CnpModel::encode_context(const Tensor& xc, const Tensor& yc) const {
  if (xc.rows() == 0) throw UsageError("encode_context: empty context");
  Graph g;
  const Graph::NodeId enc = encode(g, g.constant(xc), g.constant(yc), 1);
  const Graph::NodeId pooled = pool(g, enc, 1);
  return g.value(pooled);
}

PredictiveDist CnpModel::predict(const data::EpisodeTensors& et) const {
  Graph g;
  const ForwardNodes fwd = build_forward(g, et);
  PredictiveDist dist;
  dist.family = cfg_.likelihood;
  if (cfg_.likelihood == Likelihood::Gaussian) {
    dist.mu = g.value(fwd.dist.mu);
    dist.sigma = g.value(fwd.dist.sigma);
  } else {
    Tensor p = g.value(fwd.dist.logits);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      p[i] = 1.0 / (1.0 + std::exp(-p[i]));
    }
    dist.mu = std::move(p);
  }
  return dist;
}

}  // namespace cnpadv::model
