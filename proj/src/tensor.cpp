#include "mqtts/tensor.hpp"

#include <algorithm>

namespace mqtts {

Index shape_size(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

Tensor Graph::leaf(const Shape& shape, std::span<const double> data, bool requires_grad) {
  if (shape_size(shape) != static_cast<Index>(data.size()))
    fail(ErrorKind::dimension, "leaf data size " + std::to_string(data.size()) +
                                   " does not match shape " + shape_str(shape));
  Node* n = make("leaf", shape, {});
  n->value.assign(data.begin(), data.end());
  n->requires_grad = record_ && requires_grad;
  return Tensor(n);
}

Tensor Graph::leaf_fill(const Shape& shape, double fill, bool requires_grad) {
  Node* n = make("leaf", shape, {});
  n->value.assign(static_cast<std::size_t>(shape_size(shape)), fill);
  n->requires_grad = record_ && requires_grad;
  return Tensor(n);
}

Node* Graph::make(const char* op, Shape shape, std::vector<Node*> parents) {
  for (Node* p : parents)
    if (p->graph != this)
      fail(ErrorKind::contract, "tensors from different graphs mixed in op " + std::string(op));
  auto n = std::make_unique<Node>();
  n->graph = this;
  n->id = static_cast<Index>(nodes_.size());
  n->op = op;
  n->shape = std::move(shape);
  n->value.assign(static_cast<std::size_t>(shape_size(n->shape)), 0.0);
  if (record_) {
    bool req = false;
    for (Node* p : parents) req = req || p->requires_grad;
    n->requires_grad = req;
    n->parents = std::move(parents);
  }
  nodes_.push_back(std::move(n));
  return nodes_.back().get();
}

GradMap Graph::grad(Tensor loss, std::span<const Tensor> leaves) {
  if (!record_) fail(ErrorKind::contract, "grad() on a non-recording graph");
  if (!loss.valid() || loss.node()->graph != this)
    fail(ErrorKind::contract, "loss tensor does not belong to this graph");
  if (loss.size() != 1)
    fail(ErrorKind::contract, "grad() requires a scalar loss, got shape " + shape_str(loss.shape()));

  ++epoch_;
  std::vector<Node*> stack{loss.node()};
  loss.node()->mark = epoch_;
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    for (Node* p : n->parents) {
      if (p->mark != epoch_) {
        p->mark = epoch_;
        stack.push_back(p);
      }
    }
  }

  for (auto& n : nodes_)
    if (n->mark == epoch_) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = it->get();
    if (n->mark == epoch_ && n->requires_grad && n->backward) n->backward();
  }

  GradMap out;
  for (const Tensor& t : leaves) {
    if (!t.valid() || t.node()->graph != this)
      fail(ErrorKind::contract, "grad() leaf does not belong to this graph");
    Node* n = t.node();
    if (n->mark == epoch_ && !n->grad.empty())
      out[n] = n->grad;
    else
      out[n] = std::vector<double>(n->value.size(), 0.0);
  }
  return out;
}

}  // namespace mqtts
