#include "cnpadv/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "cnpadv/errors.hpp"

namespace cnpadv::diff {

// ---------------------------------------------------------------------------
// Mlp

Mlp Mlp::create(ParamStore& store, const std::string& prefix, const MlpSpec& spec,
                Rng& rng) {
  if (spec.fan_in < 1 || spec.fan_out < 1) {
    throw UsageError("mlp " + prefix + ": fan_in and fan_out must be positive");
  }
  Mlp mlp;
  mlp.spec_ = spec;
  std::vector<int> widths;
  widths.push_back(spec.fan_in);
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(spec.fan_out);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fi = widths[l], fo = widths[l + 1];
    Tensor w = Tensor::zeros(fi, fo);
    const double s = std::sqrt(6.0 / (fi + fo));
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-s, s);
    mlp.w_.push_back(&store.add(prefix + ".w" + std::to_string(l), std::move(w)));
    mlp.b_.push_back(&store.add(prefix + ".b" + std::to_string(l), Tensor::zeros(1, fo)));
  }
  return mlp;
}

Mlp Mlp::attach(ParamStore& store, const std::string& prefix, const MlpSpec& spec) {
  Mlp mlp;
  mlp.spec_ = spec;
  const std::size_t layers = spec.hidden.size() + 1;
  for (std::size_t l = 0; l < layers; ++l) {
    Parameter* w = store.find(prefix + ".w" + std::to_string(l));
    Parameter* b = store.find(prefix + ".b" + std::to_string(l));
    if (!w || !b) throw UsageError("mlp attach: missing parameters for " + prefix);
    mlp.w_.push_back(w);
    mlp.b_.push_back(b);
  }
  return mlp;
}

Graph::NodeId Mlp::apply(Graph& g, Graph::NodeId input) const {
  if (g.value(input).cols() != spec_.fan_in) {
    throw ShapeError("mlp: input width " + std::to_string(g.value(input).cols()) +
                     " != fan_in " + std::to_string(spec_.fan_in));
  }
  Graph::NodeId h = input;
  for (std::size_t l = 0; l < w_.size(); ++l) {
    h = g.add_row(g.matmul(h, g.param(*w_[l])), g.param(*b_[l]));
    if (l + 1 < w_.size()) h = g.relu(h);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Adam

AdamState::AdamState(std::vector<Parameter*> params, AdamConfig cfg)
    : cfg_(cfg), params_(std::move(params)) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Parameter* p : params_) {
    m_.push_back(Tensor::zeros_like(p->value));
    v_.push_back(Tensor::zeros_like(p->value));
  }
}

void AdamState::step() {
  for (const Parameter* p : params_) {
    if (!p->grad.all_finite()) {
      throw TrainError("non-finite gradient in parameter " + p->name);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter& p = *params_[pi];
    Tensor& m = m_[pi];
    Tensor& v = v_[pi];
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      if (cfg_.weight_decay != 0.0) {
        p.value[i] -= cfg_.lr * cfg_.weight_decay * p.value[i];
      }
      const double gi = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamState::save(std::ostream& os) const {
  os << "adam " << t_ << " " << format_double(cfg_.lr) << " " << format_double(cfg_.beta1)
     << " " << format_double(cfg_.beta2) << " " << format_double(cfg_.eps) << " "
     << format_double(cfg_.weight_decay) << " " << params_.size() << "\n";
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    os << params_[pi]->name << "\n";
    for (std::int64_t i = 0; i < m_[pi].size(); ++i) {
      os << format_double(m_[pi][i]) << (i + 1 == m_[pi].size() ? "\n" : " ");
    }
    for (std::int64_t i = 0; i < v_[pi].size(); ++i) {
      os << format_double(v_[pi][i]) << (i + 1 == v_[pi].size() ? "\n" : " ");
    }
  }
}

void AdamState::load(std::istream& is) {
  std::string tag;
  std::size_t count = 0;
  is >> tag >> t_ >> cfg_.lr >> cfg_.beta1 >> cfg_.beta2 >> cfg_.eps >> cfg_.weight_decay >>
      count;
  if (is.fail() || tag != "adam" || count != params_.size()) {
    throw CheckpointError("corrupt adam state");
  }
  for (std::size_t pi = 0; pi < count; ++pi) {
    std::string name;
    is >> name;
    if (name != params_[pi]->name) {
      throw CheckpointError("adam state parameter order mismatch at " + name);
    }
    for (std::int64_t i = 0; i < m_[pi].size(); ++i) is >> m_[pi][i];
    for (std::int64_t i = 0; i < v_[pi].size(); ++i) is >> v_[pi][i];
  }
  if (is.fail()) throw CheckpointError("corrupt adam state values");
}

// ---------------------------------------------------------------------------
// Parameter text format

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str()) throw CheckpointError("bad numeric literal: " + s);
  return v;
}

void save_params(std::ostream& os, const ParamStore& store) {
  os << "cnpadv-params v1\n";
  os << "count " << store.size() << "\n";
  for (const Parameter& p : store) {
    os << "param " << p.name;
    os << " " << p.value.shape().size();
    for (int d : p.value.shape()) os << " " << d;
    os << "\n";
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      os << format_double(p.value[i]) << (i + 1 == p.value.size() ? "\n" : " ");
    }
  }
}

void load_params(std::istream& is, ParamStore& store) {
  std::string line;
  if (!std::getline(is, line) || line != "cnpadv-params v1") {
    throw CheckpointError("bad parameter file header: " + line);
  }
  std::string tag;
  std::size_t count = 0;
  is >> tag >> count;
  if (tag != "count") throw CheckpointError("bad parameter file count line");
  for (std::size_t i = 0; i < count; ++i) {
    std::string name;
    std::size_t rank = 0;
    is >> tag >> name >> rank;
    if (is.fail() || tag != "param") throw CheckpointError("corrupt parameter entry");
    std::vector<int> shape(rank);
    for (auto& d : shape) is >> d;
    Parameter* p = store.find(name);
    if (!p) throw CheckpointError("unknown parameter in file: " + name);
    if (p->value.shape() != shape) {
      throw CheckpointError("shape mismatch for " + name + ": file " +
                            Tensor(shape).shape_str() + " vs store " +
                            p->value.shape_str());
    }
    for (std::int64_t j = 0; j < p->value.size(); ++j) is >> p->value[j];
    if (is.fail()) throw CheckpointError("corrupt values for parameter " + name);
  }
}

void save_params_file(const std::string& path, const ParamStore& store) {
  std::ofstream os(path);
  if (!os) throw CheckpointError("cannot write " + path);
  save_params(os, store);
}

void load_params_file(const std::string& path, ParamStore& store) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot read " + path);
  load_params(is, store);
}

std::vector<Tensor> snapshot_values(const ParamStore& store) {
  std::vector<Tensor> out;
  for (const Parameter& p : store) out.push_back(p.value);
  return out;
}

void restore_values(ParamStore& store, const std::vector<Tensor>& snapshot) {
  if (snapshot.size() != store.size()) throw UsageError("snapshot size mismatch");
  std::size_t i = 0;
  for (Parameter& p : store) p.value = snapshot[i++];
}

}  // namespace cnpadv::diff
