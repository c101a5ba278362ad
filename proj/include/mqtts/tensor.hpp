#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mqtts/error.hpp"

namespace mqtts {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class Graph;

// One tape entry. Value/grad buffers stay alive for the graph's lifetime, so
// backward closures hold plain pointers instead of copies.
struct Node {
  Graph* graph = nullptr;
  Index id = 0;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Node*> parents;
  std::function<void()> backward;
  const char* op = "leaf";
  int mark = 0;

  Index size() const { return static_cast<Index>(value.size()); }
  Index rows() const { return shape.empty() ? 0 : shape[0]; }
  Index cols() const { return shape.size() < 2 ? 1 : shape[1]; }
};

// Lightweight handle onto a graph node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Node* n) : n_(n) {}

  bool valid() const { return n_ != nullptr; }
  Node* node() const { return n_; }
  const Shape& shape() const { return n_->shape; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  Index size() const { return n_->size(); }
  Index rows() const { return n_->rows(); }
  Index cols() const { return n_->cols(); }
  const std::vector<double>& value() const { return n_->value; }
  double scalar() const {
    if (n_->size() != 1) fail(ErrorKind::contract, "scalar() on tensor of size " + std::to_string(n_->size()));
    return n_->value[0];
  }
  bool requires_grad() const { return n_->requires_grad; }
  Graph& graph() const { return *n_->graph; }

 private:
  Node* n_ = nullptr;
};

using GradMap = std::unordered_map<const Node*, std::vector<double>>;

// Reverse-mode tape. Nodes are appended in construction order; backward walks
// them in exact reverse order, so gradient accumulation is deterministic and
// runs are bit-reproducible. record=false builds a forward-only graph.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Tensor leaf(const Shape& shape, std::span<const double> data, bool requires_grad = false);
  Tensor leaf_fill(const Shape& shape, double fill, bool requires_grad = false);

  // d(loss)/d(leaf) for each requested leaf; loss must be scalar.
  GradMap grad(Tensor loss, std::span<const Tensor> leaves);

  Node* make(const char* op, Shape shape, std::vector<Node*> parents);
  Index num_nodes() const { return static_cast<Index>(nodes_.size()); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
  bool record_ = true;
  int epoch_ = 0;
};

}  // namespace mqtts
