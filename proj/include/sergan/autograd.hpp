#ifndef SERGAN_AUTOGRAD_HPP_
#define SERGAN_AUTOGRAD_HPP_

#include <functional>
#include <string>
#include <vector>

#include "sergan/tensor.hpp"

namespace sergan {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value, accumulated by Tape::backward

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
  void zero_grad() { grad.zero(); }
};

// Handle into a Tape. Plain index; valid only for the tape that produced it.
using Var = int;

// Reverse-mode tape over batched tensor ops. One tape is built per
// optimization step and discarded afterwards. Not thread-safe; use one tape
// per thread.
//
// Leaves with requires_grad=false prune their upstream subgraph: an op whose
// inputs all skip gradients produces a node that skips them too, so forward
// passes through frozen modules cost no backward work.
class Tape {
 public:
  Tape() { nodes_.reserve(256); }

  // --- leaves ------------------------------------------------------------
  Var constant(Tensor v);
  Var param(Parameter& p, bool trainable);

  // --- structure ---------------------------------------------------------
  Var reshape(Var x, std::vector<int> shape);
  // [N,C,T,B] -> [N, C*B], the features of time step t
  Var time_slice(Var x, int t);
  // [N,M] -> [N,len], columns [from, from+len)
  Var cols(Var x, int from, int len);
  // k inputs of shape [N] -> [N,k]
  Var stack_cols(const std::vector<Var>& xs);
  // [N,T] -> [N], column t
  Var col(Var x, int t);

  // --- arithmetic ---------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);           // elementwise
  Var scale(Var a, double c);
  Var row_scale(Var x, Var s);     // x[N,H] * s[N] broadcast over rows

  // --- neural net ops ------------------------------------------------------
  Var linear(Var x, Var w, Var b);                 // x[N,F], w[O,F], b[O] or -1
  Var conv2d(Var x, Var w, Var b, int stride, int pad);    // w[Co,Ci,kh,kw]
  Var deconv2d(Var x, Var w, Var b, int stride, int pad);  // w[Ci,Co,kh,kw]
  Var maxpool2(Var x);                             // 2x2, stride 2
  Var relu(Var x);
  Var leaky_relu(Var x, double alpha);
  Var sigmoid(Var x);
  Var tanh_op(Var x);
  Var softplus(Var x);
  Var clamp01(Var x);
  Var softmax_rows(Var x);                         // [N,K]

  // --- reductions / losses -------------------------------------------------
  Var mean_all(Var x);                                   // -> [1]
  Var l1_dist_rows(Var a, Var b);                        // [N,D]x2 -> [N]
  Var dot_rows(Var a, Var b);                            // [N,D]x2 -> [N]
  Var cosine_rows(Var a, Var b);                         // [N,D]x2 -> [N]
  // mean over rows of -log softmax(logits)[target]
  Var cross_entropy_rows(Var logits, const std::vector<int>& targets);
  // per-row l1 projection: out_i = eps_i * numel_row * p_i / ||p_row||_1
  Var project_l1_rows(Var p, const std::vector<double>& eps);

  // --- access ---------------------------------------------------------------
  const Tensor& value(Var v) const { return node(v).pval ? *node(v).pval : node(v).owned; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const Tensor& grad(Var v) const;
  double scalar(Var v) const;

  // Backpropagates d(loss)/d(node) from a single-element loss node, then
  // flushes leaf gradients into their Parameter::grad buffers.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* pval = nullptr;  // set for parameter leaves (aliases value)
    Parameter* pparam = nullptr;
    Tensor grad;                   // lazily sized on first accumulation
    bool requires_grad = false;
    bool grad_live = false;
    std::function<void(Tape&)> backprop;
  };

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v)]; }

  Var push(Tensor value, bool requires_grad);
  Tensor& grad_buf(Var v);         // allocates on demand
  void accum(Var v, const Tensor& g);

  std::vector<Node> nodes_;
};

}  // namespace sergan

#endif  // SERGAN_AUTOGRAD_HPP_
