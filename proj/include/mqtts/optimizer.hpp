#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mqtts/rng.hpp"
#include "mqtts/tensor.hpp"

namespace mqtts {

// Named trainable tensor. Declaration order fixes checkpoint layout.
struct Param {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> m, v;  // Adam state

  Index size() const { return static_cast<Index>(value.size()); }
};

class ParamStore {
 public:
  Param* add(const std::string& name, Shape shape);
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  Index total_size() const;
  // FNV-1a over raw value bytes; used to verify stage separation
  std::uint64_t content_hash() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

// common initializers
void init_normal(Param* p, Rng& rng, double sd);
void init_fanin(Param* p, Rng& rng, Index fan_in);
void init_uniform(Param* p, Rng& rng, double lo, double hi);
void init_zero(Param* p);

// Binds every parameter of a store into a graph as a leaf (gradients flow to
// them when train is set). One binding per graph.
class Binding {
 public:
  Binding(Graph& g, ParamStore& store, bool train);
  Tensor operator[](const Param* p) const;
  // swaps the leaf used for one parameter, e.g. to probe it with finite differences
  void replace(const Param* p, Tensor t);
  const std::vector<Tensor>& leaves() const { return leaves_; }
  ParamStore& store() const { return *store_; }

 private:
  ParamStore* store_;
  std::vector<Tensor> leaves_;
};

// copies gradients for a binding's leaves back in store order
std::vector<std::vector<double>> collect_grads(Graph& g, Tensor loss, const Binding& binding);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(ParamStore& store, AdamConfig cfg) : store_(&store), cfg_(cfg) {}
  // grads aligned with store order
  void step(const std::vector<std::vector<double>>& grads, double lr);
  std::int64_t steps_taken() const { return t_; }

 private:
  ParamStore* store_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

// linear decay from lr0 to 0 across total steps; step is 0-based
double linear_decay_lr(double lr0, std::int64_t step, std::int64_t total);

}  // namespace mqtts
