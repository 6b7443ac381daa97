#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "refocus/tensor.hpp"

namespace refocus {

using NodeId = int32_t;

// Define-by-run reverse-mode tape over small dense tensors. A fresh tape is
// built for every optimizer step. Nodes registered via param() receive
// gradient buffers; constant() nodes never do, which is the stop-gradient
// contract: there is no adjoint storage a teacher value could flow into.
class Tape {
 public:
  NodeId param(const Tensor& t);
  NodeId constant(const Tensor& t);
  NodeId constant_scalar(double v);

  // primitives; every op validates shapes and records its adjoint rule
  NodeId embed_lookup(NodeId table, int row);        // [R,C] -> [C]
  NodeId linear(NodeId w, NodeId bias, NodeId x);    // [O,I] x [I] (+[O]) -> [O]
  NodeId tanh_op(NodeId x);
  NodeId add(NodeId a, NodeId b);                    // elementwise, same shape
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);                    // hadamard
  NodeId concat(NodeId a, NodeId b);                 // vectors
  NodeId softmax(NodeId x);                          // vector
  NodeId log_softmax(NodeId x);                      // vector
  NodeId gather(NodeId x, const std::vector<int>& idx);  // vector -> subvector
  NodeId pick(NodeId x, int i);                      // vector -> scalar
  NodeId sum(NodeId x);                              // any -> scalar
  NodeId scale(NodeId x, double c);

  // D_KL(softmax(student) || softmax(teacher)); the teacher enters as a plain
  // tensor, not a node. ln q is clamped at -80 before use.
  NodeId reverse_kl(NodeId student_logits, const Tensor& teacher_logits);

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape in reverse creation order.
  void backward(NodeId loss);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  // Gradient of the last backward() w.r.t. a node that owns a buffer.
  const std::vector<double>& grad(NodeId id) const;
  bool has_grad_buffer(NodeId id) const { return !nodes_[id].grad.empty(); }
  const std::vector<NodeId>& params() const { return params_; }
  size_t node_count() const { return nodes_.size(); }

 private:
  enum class Op {
    leaf, embed, linear, tanh_, add, sub, mul, concat,
    softmax, log_softmax, gather, sum, scale, rkl
  };

  struct Node {
    Tensor value;
    std::vector<double> grad;  // empty unless needs_grad
    Op op = Op::leaf;
    NodeId a = -1, b = -1, c = -1;
    bool needs_grad = false;
    int aux_i = 0;
    double aux_d = 0.0;
    std::vector<int> aux_idx;
    Tensor cache1, cache2;  // op-specific forward caches for the backward rule
  };

  NodeId push(Node n);
  Node& at(NodeId id) { return nodes_[id]; }
  void accumulate(NodeId id, size_t flat, double g);

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
};

// In-place softmax helpers shared by the tape and the no-grad policy path.
void stable_log_softmax(const std::vector<double>& logits, std::vector<double>* out);
void stable_softmax(const std::vector<double>& logits, std::vector<double>* out);

}  // namespace refocus
