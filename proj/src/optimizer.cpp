#include "mqtts/optimizer.hpp"

#include <cmath>
#include <cstring>

namespace mqtts {

Param* ParamStore::add(const std::string& name, Shape shape) {
  if (find(name)) fail(ErrorKind::contract, "duplicate parameter name " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->shape = std::move(shape);
  std::size_t n = static_cast<std::size_t>(shape_size(p->shape));
  p->value.assign(n, 0.0);
  p->m.assign(n, 0.0);
  p->v.assign(n, 0.0);
  params_.push_back(std::move(p));
  return params_.back().get();
}

Param* ParamStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Param* ParamStore::find(const std::string& name) const {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Index ParamStore::total_size() const {
  Index n = 0;
  for (auto& p : params_) n += p->size();
  return n;
}

std::uint64_t ParamStore::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (auto& p : params_) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), p->value.size() * sizeof(double));
  }
  return h;
}

void init_normal(Param* p, Rng& rng, double sd) {
  for (double& x : p->value) x = rng.normal(0.0, sd);
}

void init_fanin(Param* p, Rng& rng, Index fan_in) {
  double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
  init_normal(p, rng, sd);
}

void init_uniform(Param* p, Rng& rng, double lo, double hi) {
  for (double& x : p->value) x = rng.uniform(lo, hi);
}

void init_zero(Param* p) {
  std::fill(p->value.begin(), p->value.end(), 0.0);
}

Binding::Binding(Graph& g, ParamStore& store, bool train) : store_(&store) {
  leaves_.reserve(store.all().size());
  for (auto& p : store.all())
    leaves_.push_back(g.leaf(p->shape, p->value, train));
}

Tensor Binding::operator[](const Param* p) const {
  for (std::size_t i = 0; i < store_->all().size(); ++i)
    if (store_->all()[i].get() == p) return leaves_[i];
  fail(ErrorKind::contract, "parameter not found in binding");
}

void Binding::replace(const Param* p, Tensor t) {
  if (t.shape() != p->shape) fail(ErrorKind::dimension, "binding replace: shape mismatch");
  for (std::size_t i = 0; i < store_->all().size(); ++i) {
    if (store_->all()[i].get() == p) {
      leaves_[i] = t;
      return;
    }
  }
  fail(ErrorKind::contract, "parameter not found in binding");
}

std::vector<std::vector<double>> collect_grads(Graph& g, Tensor loss, const Binding& binding) {
  GradMap gm = g.grad(loss, binding.leaves());
  std::vector<std::vector<double>> out;
  out.reserve(binding.leaves().size());
  for (const Tensor& t : binding.leaves()) out.push_back(std::move(gm.at(t.node())));
  return out;
}

void Adam::step(const std::vector<std::vector<double>>& grads, double lr) {
  const auto& params = store_->all();
  if (grads.size() != params.size())
    fail(ErrorKind::contract, "Adam: gradient count does not match parameter count");
  ++t_;
  double b1c = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double b2c = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param* p = params[pi].get();
    const std::vector<double>& gr = grads[pi];
    if (gr.size() != p->value.size())
      fail(ErrorKind::contract, "Adam: gradient size mismatch for " + p->name);
    for (std::size_t i = 0; i < gr.size(); ++i) {
      double gv = gr[i];
      p->m[i] = cfg_.beta1 * p->m[i] + (1.0 - cfg_.beta1) * gv;
      p->v[i] = cfg_.beta2 * p->v[i] + (1.0 - cfg_.beta2) * gv * gv;
      double mhat = p->m[i] / b1c;
      double vhat = p->v[i] / b2c;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double linear_decay_lr(double lr0, std::int64_t step, std::int64_t total) {
  if (total <= 0) return lr0;
  if (step >= total) return 0.0;
  return lr0 * static_cast<double>(total - step) / static_cast<double>(total);
}

}  // namespace mqtts
