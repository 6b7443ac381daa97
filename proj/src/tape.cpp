#include "refocus/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace refocus {

Tensor Tensor::zeros(std::vector<size_t> shape) {
  Tensor t;
  size_t n = 1;
  for (size_t d : shape) n *= d;
  t.shape = std::move(shape);
  t.v.assign(n, 0.0);
  return t;
}

Tensor Tensor::vector(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.v = std::move(values);
  return t;
}

Tensor Tensor::scalar(double value) { return vector({value}); }

bool Tensor::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void stable_log_softmax(const std::vector<double>& logits, std::vector<double>* out) {
  double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double x : logits) z += std::exp(x - m);
  double lz = m + std::log(z);
  out->resize(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) (*out)[i] = logits[i] - lz;
}

void stable_softmax(const std::vector<double>& logits, std::vector<double>* out) {
  stable_log_softmax(logits, out);
  for (double& x : *out) x = std::exp(x);
}

NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  Node& nd = nodes_.back();
  if (nd.needs_grad) nd.grad.assign(nd.value.size(), 0.0);
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::param(const Tensor& t) {
  Node n;
  n.value = t;
  n.needs_grad = true;
  NodeId id = push(std::move(n));
  params_.push_back(id);
  return id;
}

NodeId Tape::constant(const Tensor& t) {
  Node n;
  n.value = t;
  n.needs_grad = false;
  return push(std::move(n));
}

NodeId Tape::constant_scalar(double v) { return constant(Tensor::scalar(v)); }

const std::vector<double>& Tape::grad(NodeId id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) throw std::logic_error("Tape::grad: node has no gradient buffer");
  return n.grad;
}

NodeId Tape::embed_lookup(NodeId table, int row) {
  const Node& t = nodes_[table];
  if (t.value.shape.size() != 2) throw std::invalid_argument("embed_lookup: table must be 2-d");
  if (row < 0 || static_cast<size_t>(row) >= t.value.rows())
    throw std::out_of_range("embed_lookup: row out of range");
  size_t c = t.value.cols();
  Node n;
  n.op = Op::embed;
  n.a = table;
  n.aux_i = row;
  n.needs_grad = t.needs_grad;
  n.value = Tensor::zeros({c});
  for (size_t j = 0; j < c; ++j) n.value.v[j] = t.value.at(static_cast<size_t>(row), j);
  return push(std::move(n));
}

NodeId Tape::linear(NodeId w, NodeId bias, NodeId x) {
  const Node& wn = nodes_[w];
  const Node& xn = nodes_[x];
  if (wn.value.shape.size() != 2 || !xn.value.is_vector())
    throw std::invalid_argument("linear: want W [O,I] and x [I]");
  size_t out = wn.value.rows(), in = wn.value.cols();
  if (xn.value.size() != in) throw std::invalid_argument("linear: W/x dimension mismatch");
  bool has_bias = bias >= 0;
  if (has_bias) {
    const Node& bn = nodes_[bias];
    if (!bn.value.is_vector() || bn.value.size() != out)
      throw std::invalid_argument("linear: bias dimension mismatch");
  }
  Node n;
  n.op = Op::linear;
  n.a = w;
  n.b = x;
  n.c = has_bias ? bias : -1;
  n.needs_grad = wn.needs_grad || xn.needs_grad || (has_bias && nodes_[bias].needs_grad);
  n.value = Tensor::zeros({out});
  for (size_t i = 0; i < out; ++i) {
    double acc = has_bias ? nodes_[bias].value.v[i] : 0.0;
    const double* wrow = &wn.value.v[i * in];
    for (size_t j = 0; j < in; ++j) acc += wrow[j] * xn.value.v[j];
    n.value.v[i] = acc;
  }
  return push(std::move(n));
}

NodeId Tape::tanh_op(NodeId x) {
  const Node& xn = nodes_[x];
  Node n;
  n.op = Op::tanh_;
  n.a = x;
  n.needs_grad = xn.needs_grad;
  n.value = xn.value;
  for (double& v : n.value.v) v = std::tanh(v);
  return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
  const Node& an = nodes_[a];
  const Node& bn = nodes_[b];
  if (!an.value.same_shape(bn.value)) throw std::invalid_argument("add: shape mismatch");
  Node n;
  n.op = Op::add;
  n.a = a;
  n.b = b;
  n.needs_grad = an.needs_grad || bn.needs_grad;
  n.value = an.value;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.v[i] += bn.value.v[i];
  return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
  const Node& an = nodes_[a];
  const Node& bn = nodes_[b];
  if (!an.value.same_shape(bn.value)) throw std::invalid_argument("sub: shape mismatch");
  Node n;
  n.op = Op::sub;
  n.a = a;
  n.b = b;
  n.needs_grad = an.needs_grad || bn.needs_grad;
  n.value = an.value;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.v[i] -= bn.value.v[i];
  return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
  const Node& an = nodes_[a];
  const Node& bn = nodes_[b];
  if (!an.value.same_shape(bn.value)) throw std::invalid_argument("mul: shape mismatch");
  Node n;
  n.op = Op::mul;
  n.a = a;
  n.b = b;
  n.needs_grad = an.needs_grad || bn.needs_grad;
  n.value = an.value;
  for (size_t i = 0; i < n.value.size(); ++i) n.value.v[i] *= bn.value.v[i];
  return push(std::move(n));
}

NodeId Tape::concat(NodeId a, NodeId b) {
  const Node& an = nodes_[a];
  const Node& bn = nodes_[b];
  if (!an.value.is_vector() || !bn.value.is_vector())
    throw std::invalid_argument("concat: vectors only");
  Node n;
  n.op = Op::concat;
  n.a = a;
  n.b = b;
  n.needs_grad = an.needs_grad || bn.needs_grad;
  n.value = Tensor::zeros({an.value.size() + bn.value.size()});
  std::copy(an.value.v.begin(), an.value.v.end(), n.value.v.begin());
  std::copy(bn.value.v.begin(), bn.value.v.end(), n.value.v.begin() + an.value.size());
  n.aux_i = static_cast<int>(an.value.size());
  return push(std::move(n));
}

NodeId Tape::softmax(NodeId x) {
  const Node& xn = nodes_[x];
  if (!xn.value.is_vector()) throw std::invalid_argument("softmax: vector only");
  Node n;
  n.op = Op::softmax;
  n.a = x;
  n.needs_grad = xn.needs_grad;
  n.value = xn.value;
  stable_softmax(xn.value.v, &n.value.v);
  return push(std::move(n));
}

NodeId Tape::log_softmax(NodeId x) {
  const Node& xn = nodes_[x];
  if (!xn.value.is_vector()) throw std::invalid_argument("log_softmax: vector only");
  Node n;
  n.op = Op::log_softmax;
  n.a = x;
  n.needs_grad = xn.needs_grad;
  n.value = xn.value;
  stable_log_softmax(xn.value.v, &n.value.v);
  // cache p for the backward rule
  n.cache1 = Tensor::zeros({xn.value.size()});
  for (size_t i = 0; i < xn.value.size(); ++i) n.cache1.v[i] = std::exp(n.value.v[i]);
  return push(std::move(n));
}

NodeId Tape::gather(NodeId x, const std::vector<int>& idx) {
  const Node& xn = nodes_[x];
  if (!xn.value.is_vector()) throw std::invalid_argument("gather: vector only");
  Node n;
  n.op = Op::gather;
  n.a = x;
  n.needs_grad = xn.needs_grad;
  n.aux_idx = idx;
  n.value = Tensor::zeros({idx.size()});
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<size_t>(idx[i]) >= xn.value.size())
      throw std::out_of_range("gather: index out of range");
    n.value.v[i] = xn.value.v[idx[i]];
  }
  return push(std::move(n));
}

NodeId Tape::pick(NodeId x, int i) { return gather(x, {i}); }

NodeId Tape::sum(NodeId x) {
  const Node& xn = nodes_[x];
  Node n;
  n.op = Op::sum;
  n.a = x;
  n.needs_grad = xn.needs_grad;
  double acc = 0.0;
  for (double v : xn.value.v) acc += v;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

NodeId Tape::scale(NodeId x, double c) {
  const Node& xn = nodes_[x];
  Node n;
  n.op = Op::scale;
  n.a = x;
  n.aux_d = c;
  n.needs_grad = xn.needs_grad;
  n.value = xn.value;
  for (double& v : n.value.v) v *= c;
  return push(std::move(n));
}

NodeId Tape::reverse_kl(NodeId student_logits, const Tensor& teacher_logits) {
  const Node& sn = nodes_[student_logits];
  if (!sn.value.is_vector() || !teacher_logits.is_vector())
    throw std::invalid_argument("reverse_kl: vectors only");
  if (sn.value.size() != teacher_logits.size())
    throw std::invalid_argument("reverse_kl: length mismatch");
  if (!sn.value.all_finite() || !teacher_logits.all_finite())
    throw std::domain_error("reverse_kl: non-finite logits");

  const size_t V = sn.value.size();
  std::vector<double> ls, lq, p;
  stable_log_softmax(sn.value.v, &ls);
  stable_log_softmax(teacher_logits.v, &lq);
  for (double& x : lq) x = std::max(x, -80.0);  // bound ln q when teacher mass ~ 0
  p.resize(V);
  double kl = 0.0;
  for (size_t i = 0; i < V; ++i) {
    p[i] = std::exp(ls[i]);
    kl += p[i] * (ls[i] - lq[i]);
  }

  Node n;
  n.op = Op::rkl;
  n.a = student_logits;
  n.needs_grad = sn.needs_grad;
  n.value = Tensor::scalar(kl);
  n.cache1 = Tensor::vector(p);
  n.cache2 = Tensor::zeros({V});
  for (size_t i = 0; i < V; ++i) n.cache2.v[i] = ls[i] - lq[i];
  return push(std::move(n));
}

void Tape::accumulate(NodeId id, size_t flat, double g) {
  Node& n = nodes_[id];
  if (!n.grad.empty()) n.grad[flat] += g;
}

void Tape::backward(NodeId loss) {
  Node& ln = nodes_[loss];
  if (!ln.value.is_scalar()) throw std::invalid_argument("backward: loss must be scalar");
  if (ln.grad.empty()) return;  // loss does not depend on any parameter
  for (Node& n : nodes_)
    if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  ln.grad[0] = 1.0;

  for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || n.op == Op::leaf) continue;
    const std::vector<double>& g = n.grad;
    switch (n.op) {
      case Op::embed: {
        Node& t = nodes_[n.a];
        if (!t.grad.empty()) {
          size_t c = t.value.cols();
          for (size_t j = 0; j < g.size(); ++j)
            t.grad[static_cast<size_t>(n.aux_i) * c + j] += g[j];
        }
        break;
      }
      case Op::linear: {
        Node& w = nodes_[n.a];
        Node& x = nodes_[n.b];
        size_t out = w.value.rows(), in = w.value.cols();
        for (size_t i = 0; i < out; ++i) {
          double gi = g[i];
          if (gi == 0.0) continue;
          if (!w.grad.empty())
            for (size_t j = 0; j < in; ++j) w.grad[i * in + j] += gi * x.value.v[j];
          if (!x.grad.empty()) {
            const double* wrow = &w.value.v[i * in];
            for (size_t j = 0; j < in; ++j) x.grad[j] += gi * wrow[j];
          }
          if (n.c >= 0) accumulate(n.c, i, gi);
        }
        break;
      }
      case Op::tanh_: {
        for (size_t i = 0; i < g.size(); ++i)
          accumulate(n.a, i, g[i] * (1.0 - n.value.v[i] * n.value.v[i]));
        break;
      }
      case Op::add: {
        for (size_t i = 0; i < g.size(); ++i) {
          accumulate(n.a, i, g[i]);
          accumulate(n.b, i, g[i]);
        }
        break;
      }
      case Op::sub: {
        for (size_t i = 0; i < g.size(); ++i) {
          accumulate(n.a, i, g[i]);
          accumulate(n.b, i, -g[i]);
        }
        break;
      }
      case Op::mul: {
        Node& a = nodes_[n.a];
        Node& b = nodes_[n.b];
        for (size_t i = 0; i < g.size(); ++i) {
          if (!a.grad.empty()) a.grad[i] += g[i] * b.value.v[i];
          if (!b.grad.empty()) b.grad[i] += g[i] * a.value.v[i];
        }
        break;
      }
      case Op::concat: {
        size_t na = static_cast<size_t>(n.aux_i);
        for (size_t i = 0; i < na; ++i) accumulate(n.a, i, g[i]);
        for (size_t i = na; i < g.size(); ++i) accumulate(n.b, i - na, g[i]);
        break;
      }
      case Op::softmax: {
        // dx = p * (g - <p, g>)
        double dot = 0.0;
        for (size_t i = 0; i < g.size(); ++i) dot += n.value.v[i] * g[i];
        for (size_t i = 0; i < g.size(); ++i)
          accumulate(n.a, i, n.value.v[i] * (g[i] - dot));
        break;
      }
      case Op::log_softmax: {
        // dx = g - p * sum(g)
        double s = 0.0;
        for (double gi : g) s += gi;
        for (size_t i = 0; i < g.size(); ++i)
          accumulate(n.a, i, g[i] - n.cache1.v[i] * s);
        break;
      }
      case Op::gather: {
        for (size_t i = 0; i < n.aux_idx.size(); ++i)
          accumulate(n.a, static_cast<size_t>(n.aux_idx[i]), g[i]);
        break;
      }
      case Op::sum: {
        Node& a = nodes_[n.a];
        if (!a.grad.empty())
          for (size_t i = 0; i < a.grad.size(); ++i) a.grad[i] += g[0];
        break;
      }
      case Op::scale: {
        for (size_t i = 0; i < g.size(); ++i) accumulate(n.a, i, g[i] * n.aux_d);
        break;
      }
      case Op::rkl: {
        // d/dz_v = p_v * ((ln p_v - ln q_v) - KL)
        const double kl = n.value.v[0];
        const double g0 = g[0];
        for (size_t i = 0; i < n.cache1.size(); ++i)
          accumulate(n.a, i, g0 * n.cache1.v[i] * (n.cache2.v[i] - kl));
        break;
      }
      case Op::leaf:
        break;
    }
  }
}

}  // namespace refocus
