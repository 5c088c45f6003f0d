#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cnpadv/tensor.hpp"

namespace cnpadv::diff {

/// Named trainable leaf. Graphs bind these by pointer; backward() accumulates
/// into grad. Addresses must stay stable for the lifetime of any graph that
/// references them (ParamStore guarantees this).
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)) {}
};

/// Owns parameters with stable addresses and unique names.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::size_t size() const { return items_.size(); }
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  void zero_grads();
  std::int64_t total_values() const;

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::deque<Parameter> items_;  // deque: stable element addresses
};

/// Dynamically built computation graph over rank-2 tensors. Nodes are
/// appended in evaluation order (parents always precede children), values are
/// computed eagerly at construction, forward() re-evaluates from current leaf
/// contents, and backward() fills Parameter::grad for every bound parameter
/// (zero for parameters not reachable from the loss).
class Graph {
 public:
  using NodeId = int;

  // --- leaves ---
  NodeId constant(Tensor t);
  NodeId param(Parameter& p);

  // --- elementwise, same shape ---
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);

  // --- broadcast / scalar ---
  NodeId add_row(NodeId m, NodeId row);       // MxN + 1xN
  NodeId scale(NodeId a, double c);           // c * a
  NodeId add_scalar(NodeId a, double c);      // a + c

  // --- elementwise unary ---
  NodeId neg(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId sqrt(NodeId a);
  NodeId square(NodeId a);
  NodeId relu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId softplus(NodeId a);

  // --- linear algebra / layout ---
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId slice_cols(NodeId a, int begin, int end);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId repeat_rows(NodeId a, int times);    // each row repeated `times` consecutive times
  NodeId repeat_cols(NodeId a, int times);    // Mx1 -> Mxtimes

  // --- reductions ---
  NodeId sum_all(NodeId a);                   // -> 1x1
  NodeId mean_all(NodeId a);                  // -> 1x1
  NodeId sum_cols(NodeId a);                  // MxN -> Mx1
  NodeId group_mean_rows(NodeId a, int group_size);  // (G*n)xN -> GxN
  NodeId log_sum_exp_rows(NodeId a);          // MxN -> Mx1, stable
  NodeId take_diag(NodeId a);                 // NxN -> Nx1

  /// Multi-head scaled dot-product attention. q:(G*T)xD, k:(G*C)xD,
  /// v:(G*C)xD with G independent groups laid out block-wise; heads must
  /// divide D. Softmax weights per query are cached for backward and
  /// inspectable via attention_weights().
  NodeId attention(NodeId q, NodeId k, NodeId v, int n_heads, int groups = 1);

  /// Re-evaluates the graph from current leaf contents and returns the value
  /// of `loss`, which must be scalar-shaped. Must be called before backward.
  double forward(NodeId loss);

  /// Reverse pass from `loss`. Zeroes the grads of every bound parameter
  /// first, then accumulates; parameters not reachable from `loss` keep zero.
  void backward(NodeId loss);

  /// Marks cached values stale so the next forward() recomputes them
  /// (used after mutating bound parameter values in place).
  void invalidate();

  const Tensor& value(NodeId id) const;
  const Tensor& grad(NodeId id) const;
  Tensor attention_weights(NodeId attention_node) const;  // (G*H*T)xC
  std::size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op : std::uint8_t {
    Constant, Param,
    Add, Sub, Mul, Div, AddRow, Scale, AddScalar,
    Neg, Exp, Log, Sqrt, Square, Relu, Tanh, Sigmoid, Softplus,
    MatMul, Transpose, SliceCols, ConcatCols, RepeatRows, RepeatCols,
    SumAll, MeanAll, SumCols, GroupMeanRows, LogSumExpRows, TakeDiag,
    Attention,
  };

  struct Node {
    Op op;
    int pa = -1, pb = -1, pc = -1;  // parent ids
    int i0 = 0, i1 = 0;             // op-specific ints (slice range, reps, heads, groups)
    double c = 0.0;                 // op-specific scalar
    Parameter* par = nullptr;
    Tensor value;
    Tensor grad;
    std::vector<double> aux;        // cached attention weights
  };

  NodeId push(Node n);
  void eval(Node& n);
  void accumulate(Node& n);  // scatter node.grad into parents
  Node& at(NodeId id);
  const Node& at(NodeId id) const;
  Tensor& grad_buf(NodeId id);

  std::vector<Node> nodes_;
  bool values_current_ = true;
  NodeId forward_root_ = -1;
};

/// Compares backward() gradients against central finite differences of the
/// loss, over every entry of every given parameter. The graph must already
/// contain the loss; the loss must be deterministic in the parameter values
/// (fix any RNG-derived constants at build time).
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
};

GradCheckResult grad_check(Graph& g, Graph::NodeId loss,
                           std::span<Parameter* const> params, double eps);
GradCheckResult grad_check(Graph& g, Graph::NodeId loss, ParamStore& params, double eps);

}  // namespace cnpadv::diff
