#include "cnpadv/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cnpadv/errors.hpp"

namespace cnpadv::diff {

// ---------------------------------------------------------------------------
// ParamStore

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (find(name)) throw UsageError("duplicate parameter name: " + name);
  items_.emplace_back(name, std::move(init));
  return items_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  for (auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

const Parameter* ParamStore::find(const std::string& name) const {
  for (auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(&p);
  return out;
}

void ParamStore::zero_grads() {
  for (auto& p : items_) p.grad.fill(0.0);
}

std::int64_t ParamStore::total_values() const {
  std::int64_t n = 0;
  for (auto& p : items_) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Graph: node construction

Graph::Node& Graph::at(NodeId id) { return nodes_[static_cast<std::size_t>(id)]; }
const Graph::Node& Graph::at(NodeId id) const { return nodes_[static_cast<std::size_t>(id)]; }

Graph::NodeId Graph::push(Node n) {
  eval(n);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Graph::NodeId Graph::constant(Tensor t) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

Graph::NodeId Graph::param(Parameter& p) {
  Node n;
  n.op = Op::Param;
  n.par = &p;
  n.value = p.value;
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size()) - 1;
}

#define CNPADV_BINARY(NAME, OP)                                            \
  Graph::NodeId Graph::NAME(NodeId a, NodeId b) {                          \
    if (!at(a).value.same_shape(at(b).value)) {                            \
      throw ShapeError(#NAME ": operand shapes " + at(a).value.shape_str() \
                       + " and " + at(b).value.shape_str() + " differ");   \
    }                                                                      \
    Node n;                                                                \
    n.op = Op::OP;                                                         \
    n.pa = a;                                                              \
    n.pb = b;                                                              \
    return push(std::move(n));                                             \
  }

CNPADV_BINARY(add, Add)
CNPADV_BINARY(sub, Sub)
CNPADV_BINARY(mul, Mul)
CNPADV_BINARY(div, Div)
#undef CNPADV_BINARY

Graph::NodeId Graph::add_row(NodeId m, NodeId row) {
  const Tensor& mv = at(m).value;
  const Tensor& rv = at(row).value;
  if (rv.rows() != 1 || rv.cols() != mv.cols()) {
    throw ShapeError("add_row: shapes " + mv.shape_str() + " and " + rv.shape_str() +
                     " are not MxN + 1xN");
  }
  Node n;
  n.op = Op::AddRow;
  n.pa = m;
  n.pb = row;
  return push(std::move(n));
}

Graph::NodeId Graph::scale(NodeId a, double c) {
  Node n;
  n.op = Op::Scale;
  n.pa = a;
  n.c = c;
  return push(std::move(n));
}

Graph::NodeId Graph::add_scalar(NodeId a, double c) {
  Node n;
  n.op = Op::AddScalar;
  n.pa = a;
  n.c = c;
  return push(std::move(n));
}

#define CNPADV_UNARY(NAME, OP)              \
  Graph::NodeId Graph::NAME(NodeId a) {     \
    Node n;                                 \
    n.op = Op::OP;                          \
    n.pa = a;                               \
    return push(std::move(n));              \
  }

CNPADV_UNARY(neg, Neg)
CNPADV_UNARY(exp, Exp)
CNPADV_UNARY(log, Log)
CNPADV_UNARY(sqrt, Sqrt)
CNPADV_UNARY(square, Square)
CNPADV_UNARY(relu, Relu)
CNPADV_UNARY(tanh, Tanh)
CNPADV_UNARY(sigmoid, Sigmoid)
CNPADV_UNARY(softplus, Softplus)
#undef CNPADV_UNARY

Graph::NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& av = at(a).value;
  const Tensor& bv = at(b).value;
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions of " + av.shape_str() + " and " +
                     bv.shape_str() + " do not match");
  }
  Node n;
  n.op = Op::MatMul;
  n.pa = a;
  n.pb = b;
  return push(std::move(n));
}

Graph::NodeId Graph::transpose(NodeId a) {
  Node n;
  n.op = Op::Transpose;
  n.pa = a;
  return push(std::move(n));
}

Graph::NodeId Graph::slice_cols(NodeId a, int begin, int end) {
  const Tensor& av = at(a).value;
  if (begin < 0 || end <= begin || end > av.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + av.shape_str());
  }
  Node n;
  n.op = Op::SliceCols;
  n.pa = a;
  n.i0 = begin;
  n.i1 = end;
  return push(std::move(n));
}

Graph::NodeId Graph::concat_cols(NodeId a, NodeId b) {
  const Tensor& av = at(a).value;
  const Tensor& bv = at(b).value;
  if (av.rows() != bv.rows()) {
    throw ShapeError("concat_cols: row counts of " + av.shape_str() + " and " +
                     bv.shape_str() + " differ");
  }
  Node n;
  n.op = Op::ConcatCols;
  n.pa = a;
  n.pb = b;
  return push(std::move(n));
}

Graph::NodeId Graph::repeat_rows(NodeId a, int times) {
  if (times < 1) throw UsageError("repeat_rows: times must be >= 1");
  Node n;
  n.op = Op::RepeatRows;
  n.pa = a;
  n.i0 = times;
  return push(std::move(n));
}

Graph::NodeId Graph::repeat_cols(NodeId a, int times) {
  if (at(a).value.cols() != 1) {
    throw ShapeError("repeat_cols: input must be Mx1, got " + at(a).value.shape_str());
  }
  if (times < 1) throw UsageError("repeat_cols: times must be >= 1");
  Node n;
  n.op = Op::RepeatCols;
  n.pa = a;
  n.i0 = times;
  return push(std::move(n));
}

Graph::NodeId Graph::sum_all(NodeId a) {
  Node n;
  n.op = Op::SumAll;
  n.pa = a;
  return push(std::move(n));
}

Graph::NodeId Graph::mean_all(NodeId a) {
  Node n;
  n.op = Op::MeanAll;
  n.pa = a;
  return push(std::move(n));
}

Graph::NodeId Graph::sum_cols(NodeId a) {
  Node n;
  n.op = Op::SumCols;
  n.pa = a;
  return push(std::move(n));
}

Graph::NodeId Graph::group_mean_rows(NodeId a, int group_size) {
  const Tensor& av = at(a).value;
  if (group_size < 1 || av.rows() % group_size != 0) {
    throw ShapeError("group_mean_rows: group size " + std::to_string(group_size) +
                     " does not divide rows of " + av.shape_str());
  }
  Node n;
  n.op = Op::GroupMeanRows;
  n.pa = a;
  n.i0 = group_size;
  return push(std::move(n));
}

Graph::NodeId Graph::log_sum_exp_rows(NodeId a) {
  Node n;
  n.op = Op::LogSumExpRows;
  n.pa = a;
  return push(std::move(n));
}

Graph::NodeId Graph::take_diag(NodeId a) {
  const Tensor& av = at(a).value;
  if (av.rows() != av.cols()) {
    throw ShapeError("take_diag: matrix must be square, got " + av.shape_str());
  }
  Node n;
  n.op = Op::TakeDiag;
  n.pa = a;
  return push(std::move(n));
}

Graph::NodeId Graph::attention(NodeId q, NodeId k, NodeId v, int n_heads, int groups) {
  const Tensor& qv = at(q).value;
  const Tensor& kv = at(k).value;
  const Tensor& vv = at(v).value;
  const int d = qv.cols();
  if (kv.cols() != d || vv.cols() != d) {
    throw ShapeError("attention: feature widths differ: " + qv.shape_str() + ", " +
                     kv.shape_str() + ", " + vv.shape_str());
  }
  if (kv.rows() != vv.rows()) {
    throw ShapeError("attention: key count " + std::to_string(kv.rows()) +
                     " != value count " + std::to_string(vv.rows()));
  }
  if (n_heads < 1 || d % n_heads != 0) {
    throw ShapeError("attention: heads " + std::to_string(n_heads) +
                     " must divide feature width " + std::to_string(d));
  }
  if (groups < 1 || qv.rows() % groups != 0 || kv.rows() % groups != 0) {
    throw ShapeError("attention: groups " + std::to_string(groups) +
                     " must divide query and key counts");
  }
  if (kv.rows() == 0 || kv.rows() / groups == 0) {
    throw UsageError("attention: needs at least one key per group");
  }
  Node n;
  n.op = Op::Attention;
  n.pa = q;
  n.pb = k;
  n.pc = v;
  n.i0 = n_heads;
  n.i1 = groups;
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Graph: forward evaluation

void Graph::eval(Node& n) {
  Tensor& V = n.value;
  const Tensor* A = n.pa >= 0 ? &at(n.pa).value : nullptr;
  const Tensor* B = n.pb >= 0 ? &at(n.pb).value : nullptr;
  const Tensor* C = n.pc >= 0 ? &at(n.pc).value : nullptr;

  switch (n.op) {
    case Op::Constant:
      break;
    case Op::Param:
      if (!n.value.same_shape(n.par->value)) {
        throw ShapeError("parameter " + n.par->name + " changed shape from " +
                         n.value.shape_str() + " to " + n.par->value.shape_str());
      }
      V = n.par->value;
      break;
    case Op::Add: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] += (*B)[i];
      break;
    }
    case Op::Sub: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] -= (*B)[i];
      break;
    }
    case Op::Mul: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] *= (*B)[i];
      break;
    }
    case Op::Div: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] /= (*B)[i];
      break;
    }
    case Op::AddRow: {
      V = *A;
      const int rows = A->rows(), cols = A->cols();
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) V.at(r, c) += (*B)[c];
      }
      break;
    }
    case Op::Scale: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] *= n.c;
      break;
    }
    case Op::AddScalar: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] += n.c;
      break;
    }
    case Op::Neg: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] = -V[i];
      break;
    }
    case Op::Exp: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] = std::exp(V[i]);
      break;
    }
    case Op::Log: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] = std::log(V[i]);
      break;
    }
    case Op::Sqrt: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] = std::sqrt(V[i]);
      break;
    }
    case Op::Square: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] *= V[i];
      break;
    }
    case Op::Relu: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] = V[i] > 0.0 ? V[i] : 0.0;
      break;
    }
    case Op::Tanh: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] = std::tanh(V[i]);
      break;
    }
    case Op::Sigmoid: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] = stable_sigmoid(V[i]);
      break;
    }
    case Op::Softplus: {
      V = *A;
      for (std::int64_t i = 0; i < V.size(); ++i) V[i] = stable_softplus(V[i]);
      break;
    }
    case Op::MatMul: {
      const int m = A->rows(), k = A->cols(), nn = B->cols();
      if (!V.same_shape(Tensor::zeros(m, nn))) V = Tensor::zeros(m, nn);
      gemm(false, false, m, nn, k, 1.0, A->raw(), k, B->raw(), nn, 0.0, V.raw(), nn);
      break;
    }
    case Op::Transpose: {
      const int r = A->rows(), c = A->cols();
      if (V.rows() != c || V.cols() != r) V = Tensor::zeros(c, r);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) V.at(j, i) = A->at(i, j);
      }
      break;
    }
    case Op::SliceCols: {
      const int r = A->rows(), w = n.i1 - n.i0;
      if (V.rows() != r || V.cols() != w) V = Tensor::zeros(r, w);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < w; ++j) V.at(i, j) = A->at(i, n.i0 + j);
      }
      break;
    }
    case Op::ConcatCols: {
      const int r = A->rows(), ca = A->cols(), cb = B->cols();
      if (V.rows() != r || V.cols() != ca + cb) V = Tensor::zeros(r, ca + cb);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j) V.at(i, j) = A->at(i, j);
        for (int j = 0; j < cb; ++j) V.at(i, ca + j) = B->at(i, j);
      }
      break;
    }
    case Op::RepeatRows: {
      const int r = A->rows(), c = A->cols(), m = n.i0;
      if (V.rows() != r * m || V.cols() != c) V = Tensor::zeros(r * m, c);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < m; ++j) {
          std::copy_n(A->raw() + static_cast<std::size_t>(i) * c, c,
                      V.raw() + static_cast<std::size_t>(i * m + j) * c);
        }
      }
      break;
    }
    case Op::RepeatCols: {
      const int r = A->rows(), m = n.i0;
      if (V.rows() != r || V.cols() != m) V = Tensor::zeros(r, m);
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < m; ++j) V.at(i, j) = (*A)[i];
      }
      break;
    }
    case Op::SumAll: {
      double s = 0.0;
      for (std::int64_t i = 0; i < A->size(); ++i) s += (*A)[i];
      V = Tensor::scalar(s);
      break;
    }
    case Op::MeanAll: {
      double s = 0.0;
      for (std::int64_t i = 0; i < A->size(); ++i) s += (*A)[i];
      V = Tensor::scalar(s / static_cast<double>(A->size()));
      break;
    }
    case Op::SumCols: {
      const int r = A->rows(), c = A->cols();
      if (V.rows() != r || V.cols() != 1) V = Tensor::zeros(r, 1);
      for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += A->at(i, j);
        V[i] = s;
      }
      break;
    }
    case Op::GroupMeanRows: {
      const int gs = n.i0, groups = A->rows() / gs, c = A->cols();
      if (V.rows() != groups || V.cols() != c) V = Tensor::zeros(groups, c);
      V.fill(0.0);
      for (int g = 0; g < groups; ++g) {
        for (int i = 0; i < gs; ++i) {
          for (int j = 0; j < c; ++j) V.at(g, j) += A->at(g * gs + i, j);
        }
        for (int j = 0; j < c; ++j) V.at(g, j) /= gs;
      }
      break;
    }
    case Op::LogSumExpRows: {
      const int r = A->rows(), c = A->cols();
      if (V.rows() != r || V.cols() != 1) V = Tensor::zeros(r, 1);
      for (int i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) mx = std::max(mx, A->at(i, j));
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += std::exp(A->at(i, j) - mx);
        V[i] = mx + std::log(s);
      }
      break;
    }
    case Op::TakeDiag: {
      const int r = A->rows();
      if (V.rows() != r || V.cols() != 1) V = Tensor::zeros(r, 1);
      for (int i = 0; i < r; ++i) V[i] = A->at(i, i);
      break;
    }
    case Op::Attention: {
      const int heads = n.i0, groups = n.i1;
      const int d = A->cols(), dh = d / heads;
      const int t = A->rows() / groups, c = B->rows() / groups;
      const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
      if (!V.same_shape(*A)) V = Tensor::zeros(A->rows(), d);
      n.aux.assign(static_cast<std::size_t>(groups) * heads * t * c, 0.0);
      std::vector<double> logits(static_cast<std::size_t>(t) * c);
      for (int g = 0; g < groups; ++g) {
        for (int h = 0; h < heads; ++h) {
          const double* Q = A->raw() + static_cast<std::size_t>(g) * t * d + h * dh;
          const double* K = B->raw() + static_cast<std::size_t>(g) * c * d + h * dh;
          const double* Vv = C->raw() + static_cast<std::size_t>(g) * c * d + h * dh;
          gemm(false, true, t, c, dh, sc, Q, d, K, d, 0.0, logits.data(), c);
          // row softmax
          for (int i = 0; i < t; ++i) {
            double* row = logits.data() + static_cast<std::size_t>(i) * c;
            double mx = row[0];
            for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
            double s = 0.0;
            for (int j = 0; j < c; ++j) {
              row[j] = std::exp(row[j] - mx);
              s += row[j];
            }
            for (int j = 0; j < c; ++j) row[j] /= s;
          }
          double* wcache = n.aux.data() + (static_cast<std::size_t>(g) * heads + h) * t * c;
          std::copy(logits.begin(), logits.end(), wcache);
          gemm(false, false, t, dh, c, 1.0, logits.data(), c, Vv, d, 0.0,
               V.raw() + static_cast<std::size_t>(g) * t * d + h * dh, d);
        }
      }
      break;
    }
  }
}

double Graph::forward(NodeId loss) {
  if (loss < 0 || loss >= static_cast<NodeId>(nodes_.size())) {
    throw UsageError("forward: node id out of range");
  }
  if (at(loss).value.size() != 1) {
    throw UsageError("forward: loss node must be scalar, got " + at(loss).value.shape_str());
  }
  if (!values_current_) {
    for (NodeId id = 0; id <= loss; ++id) eval(nodes_[static_cast<std::size_t>(id)]);
    values_current_ = true;
  }
  forward_root_ = std::max(forward_root_, loss);
  return at(loss).value[0];
}

void Graph::invalidate() {
  values_current_ = false;
  forward_root_ = -1;
}

// ---------------------------------------------------------------------------
// Graph: backward

Tensor& Graph::grad_buf(NodeId id) {
  Node& n = at(id);
  if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Graph::backward(NodeId loss) {
  if (forward_root_ < loss) {
    throw UsageError("backward called before forward on this loss node");
  }
  for (auto& n : nodes_) n.grad = Tensor();
  for (auto& n : nodes_) {
    if (n.op == Op::Param) n.par->grad.fill(0.0);
  }
  grad_buf(loss)[0] = 1.0;
  for (NodeId id = loss; id >= 0; --id) {
    Node& n = at(id);
    if (n.grad.empty()) continue;
    if (n.op == Op::Param) {
      for (std::int64_t i = 0; i < n.grad.size(); ++i) n.par->grad[i] += n.grad[i];
      continue;
    }
    accumulate(n);
  }
}

void Graph::accumulate(Node& n) {
  const Tensor& g = n.grad;

  switch (n.op) {
    case Op::Constant:
    case Op::Param:
      break;
    case Op::Add: {
      Tensor& ga = grad_buf(n.pa);
      Tensor& gb = grad_buf(n.pb);
      for (std::int64_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
      break;
    }
    case Op::Sub: {
      Tensor& ga = grad_buf(n.pa);
      Tensor& gb = grad_buf(n.pb);
      for (std::int64_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
      break;
    }
    case Op::Mul: {
      Tensor& ga = grad_buf(n.pa);
      Tensor& gb = grad_buf(n.pb);
      const Tensor& av = at(n.pa).value;
      const Tensor& bv = at(n.pb).value;
      for (std::int64_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * bv[i];
        gb[i] += g[i] * av[i];
      }
      break;
    }
    case Op::Div: {
      Tensor& ga = grad_buf(n.pa);
      Tensor& gb = grad_buf(n.pb);
      const Tensor& bv = at(n.pb).value;
      for (std::int64_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] / bv[i];
        gb[i] -= g[i] * n.value[i] / bv[i];
      }
      break;
    }
    case Op::AddRow: {
      Tensor& ga = grad_buf(n.pa);
      Tensor& gb = grad_buf(n.pb);
      const int rows = g.rows(), cols = g.cols();
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          ga.at(r, c) += g.at(r, c);
          gb[c] += g.at(r, c);
        }
      }
      break;
    }
    case Op::Scale: {
      Tensor& ga = grad_buf(n.pa);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += n.c * g[i];
      break;
    }
    case Op::AddScalar: {
      Tensor& ga = grad_buf(n.pa);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      break;
    }
    case Op::Neg: {
      Tensor& ga = grad_buf(n.pa);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] -= g[i];
      break;
    }
    case Op::Exp: {
      Tensor& ga = grad_buf(n.pa);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * n.value[i];
      break;
    }
    case Op::Log: {
      Tensor& ga = grad_buf(n.pa);
      const Tensor& av = at(n.pa).value;
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
      break;
    }
    case Op::Sqrt: {
      Tensor& ga = grad_buf(n.pa);
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / (2.0 * n.value[i]);
      break;
    }
    case Op::Square: {
      Tensor& ga = grad_buf(n.pa);
      const Tensor& av = at(n.pa).value;
      for (std::int64_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
      break;
    }
    case Op::Relu: {
      Tensor& ga = grad_buf(n.pa);
      const Tensor& av = at(n.pa).value;
      for (std::int64_t i = 0; i < g.size(); ++i) {
        if (av[i] > 0.0) ga[i] += g[i];
      }
      break;
    }
    case Op::Tanh: {
      Tensor& ga = grad_buf(n.pa);
      for (std::int64_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      }
      break;
    }
    case Op::Sigmoid: {
      Tensor& ga = grad_buf(n.pa);
      for (std::int64_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      }
      break;
    }
    case Op::Softplus: {
      Tensor& ga = grad_buf(n.pa);
      const Tensor& av = at(n.pa).value;
      for (std::int64_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * stable_sigmoid(av[i]);
      }
      break;
    }
    case Op::MatMul: {
      const Tensor& av = at(n.pa).value;
      const Tensor& bv = at(n.pb).value;
      Tensor& ga = grad_buf(n.pa);
      Tensor& gb = grad_buf(n.pb);
      const int m = av.rows(), k = av.cols(), nn = bv.cols();
      // dA += g * B^T ; dB += A^T * g
      gemm(false, true, m, k, nn, 1.0, g.raw(), nn, bv.raw(), nn, 1.0, ga.raw(), k);
      gemm(true, false, k, nn, m, 1.0, av.raw(), k, g.raw(), nn, 1.0, gb.raw(), nn);
      break;
    }
    case Op::Transpose: {
      Tensor& ga = grad_buf(n.pa);
      const int r = g.rows(), c = g.cols();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) ga.at(j, i) += g.at(i, j);
      }
      break;
    }
    case Op::SliceCols: {
      Tensor& ga = grad_buf(n.pa);
      const int r = g.rows(), w = n.i1 - n.i0;
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < w; ++j) ga.at(i, n.i0 + j) += g.at(i, j);
      }
      break;
    }
    case Op::ConcatCols: {
      Tensor& ga = grad_buf(n.pa);
      Tensor& gb = grad_buf(n.pb);
      const int r = g.rows(), ca = ga.cols(), cb = gb.cols();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < ca; ++j) ga.at(i, j) += g.at(i, j);
        for (int j = 0; j < cb; ++j) gb.at(i, j) += g.at(i, ca + j);
      }
      break;
    }
    case Op::RepeatRows: {
      Tensor& ga = grad_buf(n.pa);
      const int r = ga.rows(), c = ga.cols(), m = n.i0;
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < m; ++j) {
          const double* grow = g.raw() + static_cast<std::size_t>(i * m + j) * c;
          double* arow = ga.raw() + static_cast<std::size_t>(i) * c;
          for (int x = 0; x < c; ++x) arow[x] += grow[x];
        }
      }
      break;
    }
    case Op::RepeatCols: {
      Tensor& ga = grad_buf(n.pa);
      const int r = g.rows(), m = n.i0;
      for (int i = 0; i < r; ++i) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += g.at(i, j);
        ga[i] += s;
      }
      break;
    }
    case Op::SumAll: {
      Tensor& ga = grad_buf(n.pa);
      for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
      break;
    }
    case Op::MeanAll: {
      Tensor& ga = grad_buf(n.pa);
      const double s = g[0] / static_cast<double>(ga.size());
      for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += s;
      break;
    }
    case Op::SumCols: {
      Tensor& ga = grad_buf(n.pa);
      const int r = ga.rows(), c = ga.cols();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) ga.at(i, j) += g[i];
      }
      break;
    }
    case Op::GroupMeanRows: {
      Tensor& ga = grad_buf(n.pa);
      const int gs = n.i0, groups = g.rows(), c = g.cols();
      for (int gi = 0; gi < groups; ++gi) {
        for (int i = 0; i < gs; ++i) {
          for (int j = 0; j < c; ++j) ga.at(gi * gs + i, j) += g.at(gi, j) / gs;
        }
      }
      break;
    }
    case Op::LogSumExpRows: {
      Tensor& ga = grad_buf(n.pa);
      const Tensor& av = at(n.pa).value;
      const int r = av.rows(), c = av.cols();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
          ga.at(i, j) += g[i] * std::exp(av.at(i, j) - n.value[i]);
        }
      }
      break;
    }
    case Op::TakeDiag: {
      Tensor& ga = grad_buf(n.pa);
      const int r = g.rows();
      for (int i = 0; i < r; ++i) ga.at(i, i) += g[i];
      break;
    }
    case Op::Attention: {
      const Tensor& qv = at(n.pa).value;
      const Tensor& kv = at(n.pb).value;
      const Tensor& vv = at(n.pc).value;
      Tensor& gq = grad_buf(n.pa);
      Tensor& gk = grad_buf(n.pb);
      Tensor& gv = grad_buf(n.pc);
      const int heads = n.i0, groups = n.i1;
      const int d = qv.cols(), dh = d / heads;
      const int t = qv.rows() / groups, c = kv.rows() / groups;
      const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
      std::vector<double> dw(static_cast<std::size_t>(t) * c);
      std::vector<double> dlogits(static_cast<std::size_t>(t) * c);
      for (int gi = 0; gi < groups; ++gi) {
        for (int h = 0; h < heads; ++h) {
          const std::size_t qoff = static_cast<std::size_t>(gi) * t * d + h * dh;
          const std::size_t koff = static_cast<std::size_t>(gi) * c * d + h * dh;
          const double* W = n.aux.data() + (static_cast<std::size_t>(gi) * heads + h) * t * c;
          const double* dOut = g.raw() + qoff;
          // dV += W^T * dOut
          gemm(true, false, c, dh, t, 1.0, W, c, dOut, d, 1.0, gv.raw() + koff, d);
          // dW = dOut * V^T
          gemm(false, true, t, c, dh, 1.0, dOut, d, vv.raw() + koff, d, 0.0, dw.data(), c);
          // softmax backward per row
          for (int i = 0; i < t; ++i) {
            const double* wrow = W + static_cast<std::size_t>(i) * c;
            const double* dwrow = dw.data() + static_cast<std::size_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += wrow[j] * dwrow[j];
            double* dlrow = dlogits.data() + static_cast<std::size_t>(i) * c;
            for (int j = 0; j < c; ++j) dlrow[j] = wrow[j] * (dwrow[j] - dot);
          }
          // dQ += dlogits * K * sc ; dK += dlogits^T * Q * sc
          gemm(false, false, t, dh, c, sc, dlogits.data(), c, kv.raw() + koff, d, 1.0,
               gq.raw() + qoff, d);
          gemm(true, false, c, dh, t, sc, dlogits.data(), c, qv.raw() + qoff, d, 1.0,
               gk.raw() + koff, d);
        }
      }
      break;
    }
  }
}

const Tensor& Graph::value(NodeId id) const { return at(id).value; }
const Tensor& Graph::grad(NodeId id) const { return at(id).grad; }

Tensor Graph::attention_weights(NodeId attention_node) const {
  const Node& n = at(attention_node);
  if (n.op != Op::Attention) throw UsageError("node is not an attention node");
  const int heads = n.i0, groups = n.i1;
  const int t = n.value.rows() / groups;
  const int c = static_cast<int>(n.aux.size()) / (groups * heads * t);
  return Tensor({groups * heads * t, c}, n.aux);
}

// ---------------------------------------------------------------------------
// grad_check

GradCheckResult grad_check(Graph& g, Graph::NodeId loss,
                           std::span<Parameter* const> params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw UsageError("grad_check: eps must be in (0, 1e-2]");
  }
  g.forward(loss);
  g.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const Parameter* p : params) analytic.push_back(p->grad);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (std::int64_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + eps;
      g.invalidate();
      const double f_plus = g.forward(loss);
      p->value[i] = orig - eps;
      g.invalidate();
      const double f_minus = g.forward(loss);
      p->value[i] = orig;
      const double fd = (f_plus - f_minus) / (2.0 * eps);
      const double an = analytic[pi][i];
      const double denom = std::max({std::abs(an), std::abs(fd), 1e-6});
      const double rel = std::abs(an - fd) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = p->name;
        result.worst_index = static_cast<int>(i);
      }
    }
  }
  g.invalidate();
  g.forward(loss);
  return result;
}

GradCheckResult grad_check(Graph& g, Graph::NodeId loss, ParamStore& params, double eps) {
  auto all = params.all();
  return grad_check(g, loss, std::span<Parameter* const>(all.data(), all.size()), eps);
}

}  // namespace cnpadv::diff
