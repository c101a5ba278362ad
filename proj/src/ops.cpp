#include "mqtts/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "mqtts/kernels.hpp"

namespace mqtts {

namespace {

void check_same_shape(const char* op, Tensor a, Tensor b) {
  if (a.shape() != b.shape())
    fail(ErrorKind::dimension, std::string(op) + ": shapes " + shape_str(a.shape()) +
                                   " and " + shape_str(b.shape()) + " differ");
}

void check_2d(const char* op, Tensor x) {
  if (x.ndim() != 2)
    fail(ErrorKind::dimension, std::string(op) + ": expected 2-D tensor, got " + shape_str(x.shape()));
}

// vector argument that may be (C) or (1 x C)
Index vec_len(Tensor v) {
  if (v.ndim() == 1) return v.shape()[0];
  if (v.ndim() == 2 && v.shape()[0] == 1) return v.shape()[1];
  if (v.ndim() == 2 && v.shape()[1] == 1) return v.shape()[0];
  return -1;
}

bool wants_backward(Graph& g, Node* n) { return g.recording() && n->requires_grad; }

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const char* op, Tensor x, Fwd fwd, Bwd bwd) {
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make(op, x.shape(), {xn});
  const auto& xv = xn->value;
  for (std::size_t i = 0; i < xv.size(); ++i) n->value[i] = fwd(xv[i]);
  if (wants_backward(g, n)) {
    n->backward = [xn, n, bwd] {
      for (std::size_t i = 0; i < xn->grad.size(); ++i)
        xn->grad[i] += n->grad[i] * bwd(xn->value[i], n->value[i]);
    };
  }
  return Tensor(n);
}

}  // namespace

Tensor add(Tensor a, Tensor b) {
  check_same_shape("add", a, b);
  Graph& g = a.graph();
  Node *an = a.node(), *bn = b.node();
  Node* n = g.make("add", a.shape(), {an, bn});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = an->value[i] + bn->value[i];
  if (wants_backward(g, n)) {
    n->backward = [an, bn, n] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n->grad.size(); ++i) an->grad[i] += n->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n->grad.size(); ++i) bn->grad[i] += n->grad[i];
    };
  }
  return Tensor(n);
}

Tensor sub(Tensor a, Tensor b) {
  check_same_shape("sub", a, b);
  Graph& g = a.graph();
  Node *an = a.node(), *bn = b.node();
  Node* n = g.make("sub", a.shape(), {an, bn});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = an->value[i] - bn->value[i];
  if (wants_backward(g, n)) {
    n->backward = [an, bn, n] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n->grad.size(); ++i) an->grad[i] += n->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n->grad.size(); ++i) bn->grad[i] -= n->grad[i];
    };
  }
  return Tensor(n);
}

Tensor mul(Tensor a, Tensor b) {
  check_same_shape("mul", a, b);
  Graph& g = a.graph();
  Node *an = a.node(), *bn = b.node();
  Node* n = g.make("mul", a.shape(), {an, bn});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = an->value[i] * bn->value[i];
  if (wants_backward(g, n)) {
    n->backward = [an, bn, n] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < n->grad.size(); ++i) an->grad[i] += n->grad[i] * bn->value[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < n->grad.size(); ++i) bn->grad[i] += n->grad[i] * an->value[i];
    };
  }
  return Tensor(n);
}

Tensor scale(Tensor a, double s) {
  return unary_elementwise("scale", a, [s](double x) { return s * x; },
                           [s](double, double) { return s; });
}

Tensor add_scalar(Tensor a, double s) {
  return unary_elementwise("add_scalar", a, [s](double x) { return x + s; },
                           [](double, double) { return 1.0; });
}

Tensor neg(Tensor a) { return scale(a, -1.0); }

Tensor add_rowvec(Tensor x, Tensor v) {
  check_2d("add_rowvec", x);
  Index m = x.rows(), c = x.cols();
  if (vec_len(v) != c)
    fail(ErrorKind::dimension, "add_rowvec: vector " + shape_str(v.shape()) +
                                   " does not match columns of " + shape_str(x.shape()));
  Graph& g = x.graph();
  Node *xn = x.node(), *vn = v.node();
  Node* n = g.make("add_rowvec", x.shape(), {xn, vn});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < c; ++j)
      n->value[i * c + j] = xn->value[i * c + j] + vn->value[j];
  if (wants_backward(g, n)) {
    n->backward = [xn, vn, n, m, c] {
      if (xn->requires_grad)
        for (std::size_t i = 0; i < n->grad.size(); ++i) xn->grad[i] += n->grad[i];
      if (vn->requires_grad)
        for (Index i = 0; i < m; ++i)
          for (Index j = 0; j < c; ++j) vn->grad[j] += n->grad[i * c + j];
    };
  }
  return Tensor(n);
}

Tensor mul_rowvec(Tensor x, Tensor v) {
  check_2d("mul_rowvec", x);
  Index m = x.rows(), c = x.cols();
  if (vec_len(v) != c)
    fail(ErrorKind::dimension, "mul_rowvec: vector " + shape_str(v.shape()) +
                                   " does not match columns of " + shape_str(x.shape()));
  Graph& g = x.graph();
  Node *xn = x.node(), *vn = v.node();
  Node* n = g.make("mul_rowvec", x.shape(), {xn, vn});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < c; ++j)
      n->value[i * c + j] = xn->value[i * c + j] * vn->value[j];
  if (wants_backward(g, n)) {
    n->backward = [xn, vn, n, m, c] {
      if (xn->requires_grad)
        for (Index i = 0; i < m; ++i)
          for (Index j = 0; j < c; ++j)
            xn->grad[i * c + j] += n->grad[i * c + j] * vn->value[j];
      if (vn->requires_grad)
        for (Index i = 0; i < m; ++i)
          for (Index j = 0; j < c; ++j)
            vn->grad[j] += n->grad[i * c + j] * xn->value[i * c + j];
    };
  }
  return Tensor(n);
}

Tensor mul_colvec(Tensor x, Tensor w) {
  check_2d("mul_colvec", x);
  Index m = x.rows(), c = x.cols();
  if (vec_len(w) != m)
    fail(ErrorKind::dimension, "mul_colvec: vector " + shape_str(w.shape()) +
                                   " does not match rows of " + shape_str(x.shape()));
  Graph& g = x.graph();
  Node *xn = x.node(), *wn = w.node();
  Node* n = g.make("mul_colvec", x.shape(), {xn, wn});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < c; ++j)
      n->value[i * c + j] = xn->value[i * c + j] * wn->value[i];
  if (wants_backward(g, n)) {
    n->backward = [xn, wn, n, m, c] {
      if (xn->requires_grad)
        for (Index i = 0; i < m; ++i)
          for (Index j = 0; j < c; ++j)
            xn->grad[i * c + j] += n->grad[i * c + j] * wn->value[i];
      if (wn->requires_grad)
        for (Index i = 0; i < m; ++i) {
          double s = 0.0;
          for (Index j = 0; j < c; ++j)
            s += n->grad[i * c + j] * xn->value[i * c + j];
          wn->grad[i] += s;
        }
    };
  }
  return Tensor(n);
}

Tensor rowwise_dot(Tensor a, Tensor b) {
  check_same_shape("rowwise_dot", a, b);
  check_2d("rowwise_dot", a);
  Index m = a.rows(), c = a.cols();
  Graph& g = a.graph();
  Node *an = a.node(), *bn = b.node();
  Node* n = g.make("rowwise_dot", {m, 1}, {an, bn});
  for (Index i = 0; i < m; ++i) {
    double s = 0.0;
    for (Index j = 0; j < c; ++j) s += an->value[i * c + j] * bn->value[i * c + j];
    n->value[i] = s;
  }
  if (wants_backward(g, n)) {
    n->backward = [an, bn, n, m, c] {
      for (Index i = 0; i < m; ++i) {
        double gi = n->grad[i];
        if (an->requires_grad)
          for (Index j = 0; j < c; ++j) an->grad[i * c + j] += gi * bn->value[i * c + j];
        if (bn->requires_grad)
          for (Index j = 0; j < c; ++j) bn->grad[i * c + j] += gi * an->value[i * c + j];
      }
    };
  }
  return Tensor(n);
}

Tensor matmul(Tensor a, Tensor b) {
  check_2d("matmul", a);
  check_2d("matmul", b);
  if (a.cols() != b.rows())
    fail(ErrorKind::dimension, "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                   " times " + shape_str(b.shape()));
  Index m = a.rows(), k = a.cols(), nn = b.cols();
  Graph& g = a.graph();
  Node *an = a.node(), *bn = b.node();
  Node* n = g.make("matmul", {m, nn}, {an, bn});
  kernels::gemm(false, false, m, nn, k, an->value.data(), bn->value.data(), n->value.data());
  if (wants_backward(g, n)) {
    n->backward = [an, bn, n, m, k, nn] {
      if (an->requires_grad)
        kernels::gemm(false, true, m, k, nn, n->grad.data(), bn->value.data(), an->grad.data(), true);
      if (bn->requires_grad)
        kernels::gemm(true, false, k, nn, m, an->value.data(), n->grad.data(), bn->grad.data(), true);
    };
  }
  return Tensor(n);
}

Tensor matmul_nt(Tensor a, Tensor b) {
  check_2d("matmul_nt", a);
  check_2d("matmul_nt", b);
  if (a.cols() != b.cols())
    fail(ErrorKind::dimension, "matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) +
                                   " times " + shape_str(b.shape()) + " transposed");
  Index m = a.rows(), k = a.cols(), nn = b.rows();
  Graph& g = a.graph();
  Node *an = a.node(), *bn = b.node();
  Node* n = g.make("matmul_nt", {m, nn}, {an, bn});
  kernels::gemm(false, true, m, nn, k, an->value.data(), bn->value.data(), n->value.data());
  if (wants_backward(g, n)) {
    n->backward = [an, bn, n, m, k, nn] {
      if (an->requires_grad)
        kernels::gemm(false, false, m, k, nn, n->grad.data(), bn->value.data(), an->grad.data(), true);
      if (bn->requires_grad)
        kernels::gemm(true, false, nn, k, m, n->grad.data(), an->value.data(), bn->grad.data(), true);
    };
  }
  return Tensor(n);
}

Tensor transpose(Tensor x) {
  check_2d("transpose", x);
  Index m = x.rows(), c = x.cols();
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("transpose", {c, m}, {xn});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < c; ++j) n->value[j * m + i] = xn->value[i * c + j];
  if (wants_backward(g, n)) {
    n->backward = [xn, n, m, c] {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < c; ++j) xn->grad[i * c + j] += n->grad[j * m + i];
    };
  }
  return Tensor(n);
}

Tensor relu(Tensor x) {
  return unary_elementwise("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
                           [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(Tensor x, double alpha) {
  return unary_elementwise("leaky_relu", x,
                           [alpha](double v) { return v > 0.0 ? v : alpha * v; },
                           [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha; });
}

Tensor tanh_act(Tensor x) {
  return unary_elementwise("tanh", x, [](double v) { return std::tanh(v); },
                           [](double, double o) { return 1.0 - o * o; });
}

Tensor exp_act(Tensor x) {
  return unary_elementwise("exp", x, [](double v) { return std::exp(v); },
                           [](double, double o) { return o; });
}

Tensor log_act(Tensor x) {
  for (double v : x.value())
    if (!(v > 0.0)) fail(ErrorKind::numeric, "log: non-positive input " + std::to_string(v));
  return unary_elementwise("log", x, [](double v) { return std::log(v); },
                           [](double v, double) { return 1.0 / v; });
}

Tensor abs_act(Tensor x) {
  return unary_elementwise("abs", x, [](double v) { return std::fabs(v); },
                           [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor clamp_min(Tensor x, double lo) {
  return unary_elementwise("clamp_min", x,
                           [lo](double v) { return v > lo ? v : lo; },
                           [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

namespace {

// softmax over rows of a (rows x cols) row-major buffer plus matching backward
void softmax_backward_rows(const double* out, const double* gout, double* gin,
                           Index rows, Index cols) {
  for (Index i = 0; i < rows; ++i) {
    const double* p = out + i * cols;
    const double* go = gout + i * cols;
    double dot = 0.0;
    for (Index j = 0; j < cols; ++j) dot += go[j] * p[j];
    double* gi = gin + i * cols;
    for (Index j = 0; j < cols; ++j) gi[j] += p[j] * (go[j] - dot);
  }
}

}  // namespace

Tensor softmax(Tensor x, int axis) {
  for (double v : x.value())
    if (std::isnan(v)) fail(ErrorKind::numeric, "softmax: NaN input");
  Graph& g = x.graph();
  Node* xn = x.node();
  if (x.ndim() == 1) {
    if (axis != 0)
      fail(ErrorKind::dimension, "softmax: axis " + std::to_string(axis) + " on 1-D tensor");
    Node* n = g.make("softmax", x.shape(), {xn});
    kernels::softmax_rows(xn->value.data(), 1, x.size(), n->value.data());
    if (wants_backward(g, n)) {
      Index c = x.size();
      n->backward = [xn, n, c] {
        softmax_backward_rows(n->value.data(), n->grad.data(), xn->grad.data(), 1, c);
      };
    }
    return Tensor(n);
  }
  check_2d("softmax", x);
  if (axis != 0 && axis != 1)
    fail(ErrorKind::dimension, "softmax: axis " + std::to_string(axis) + " on 2-D tensor");
  Index m = x.rows(), c = x.cols();
  Node* n = g.make("softmax", x.shape(), {xn});
  if (axis == 1) {
    kernels::softmax_rows(xn->value.data(), m, c, n->value.data());
    if (wants_backward(g, n)) {
      n->backward = [xn, n, m, c] {
        softmax_backward_rows(n->value.data(), n->grad.data(), xn->grad.data(), m, c);
      };
    }
  } else {
    std::vector<double> tx(static_cast<std::size_t>(m * c));
    std::vector<double> ty(tx.size());
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < c; ++j) tx[j * m + i] = xn->value[i * c + j];
    kernels::softmax_rows(tx.data(), c, m, ty.data());
    for (Index i = 0; i < m; ++i)
      for (Index j = 0; j < c; ++j) n->value[i * c + j] = ty[j * m + i];
    if (wants_backward(g, n)) {
      n->backward = [xn, n, m, c] {
        std::vector<double> to(static_cast<std::size_t>(m * c));
        std::vector<double> tg(to.size());
        std::vector<double> td(to.size(), 0.0);
        for (Index i = 0; i < m; ++i)
          for (Index j = 0; j < c; ++j) {
            to[j * m + i] = n->value[i * c + j];
            tg[j * m + i] = n->grad[i * c + j];
          }
        softmax_backward_rows(to.data(), tg.data(), td.data(), c, m);
        for (Index i = 0; i < m; ++i)
          for (Index j = 0; j < c; ++j) xn->grad[i * c + j] += td[j * m + i];
      };
    }
  }
  return Tensor(n);
}

Tensor cross_entropy_sum(Tensor logits, std::span<const std::int32_t> ids) {
  check_2d("cross_entropy_sum", logits);
  Index m = logits.rows(), v = logits.cols();
  if (static_cast<Index>(ids.size()) != m)
    fail(ErrorKind::dimension, "cross_entropy_sum: " + std::to_string(ids.size()) +
                                   " targets for " + std::to_string(m) + " rows");
  for (std::int32_t id : ids)
    if (id < 0 || id >= v)
      fail(ErrorKind::input, "cross_entropy_sum: target " + std::to_string(id) +
                                 " outside vocabulary of " + std::to_string(v));
  Graph& g = logits.graph();
  Node* xn = logits.node();
  Node* n = g.make("cross_entropy_sum", {1}, {xn});
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m * v));
  kernels::softmax_rows(xn->value.data(), m, v, probs->data());
  double loss = 0.0;
  for (Index i = 0; i < m; ++i) {
    const double* x = xn->value.data() + i * v;
    double mx = x[0];
    for (Index j = 1; j < v; ++j)
      if (x[j] > mx) mx = x[j];
    double s = 0.0;
    for (Index j = 0; j < v; ++j) s += std::exp(x[j] - mx);
    loss += mx + std::log(s) - x[ids[i]];
  }
  n->value[0] = loss;
  if (wants_backward(g, n)) {
    auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
    n->backward = [xn, n, probs, ids_copy, m, v] {
      double gl = n->grad[0];
      for (Index i = 0; i < m; ++i) {
        const double* p = probs->data() + i * v;
        double* gx = xn->grad.data() + i * v;
        std::int32_t id = (*ids_copy)[i];
        for (Index j = 0; j < v; ++j)
          gx[j] += gl * (p[j] - (j == id ? 1.0 : 0.0));
      }
    };
  }
  return Tensor(n);
}

Tensor sum_all(Tensor x) {
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("sum_all", {1}, {xn});
  double s = 0.0;
  for (double v : xn->value) s += v;
  n->value[0] = s;
  if (wants_backward(g, n)) {
    n->backward = [xn, n] {
      double gl = n->grad[0];
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += gl;
    };
  }
  return Tensor(n);
}

Tensor mean_all(Tensor x) {
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("mean_all", {1}, {xn});
  double s = 0.0;
  for (double v : xn->value) s += v;
  double inv = 1.0 / static_cast<double>(xn->value.size());
  n->value[0] = s * inv;
  if (wants_backward(g, n)) {
    n->backward = [xn, n, inv] {
      double gl = n->grad[0] * inv;
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += gl;
    };
  }
  return Tensor(n);
}

Tensor group_norm(Tensor x, Index channels_per_group, double eps) {
  if (x.ndim() != 1 && x.ndim() != 2)
    fail(ErrorKind::dimension, "group_norm: expected 1-D or 2-D, got " + shape_str(x.shape()));
  Index m = x.ndim() == 2 ? x.rows() : 1;
  Index c = x.ndim() == 2 ? x.cols() : x.size();
  if (channels_per_group <= 0 || c % channels_per_group != 0)
    fail(ErrorKind::config, "group_norm: " + std::to_string(c) + " channels not divisible by group size " +
                                std::to_string(channels_per_group));
  Index groups = c / channels_per_group;
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("group_norm", x.shape(), {xn});
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups));
  double count = static_cast<double>(m * channels_per_group);
  for (Index gi = 0; gi < groups; ++gi) {
    Index c0 = gi * channels_per_group, c1 = c0 + channels_per_group;
    double mean = 0.0;
    for (Index i = 0; i < m; ++i)
      for (Index j = c0; j < c1; ++j) mean += xn->value[i * c + j];
    mean /= count;
    double var = 0.0;
    for (Index i = 0; i < m; ++i)
      for (Index j = c0; j < c1; ++j) {
        double d = xn->value[i * c + j] - mean;
        var += d * d;
      }
    var /= count;
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[gi] = inv;
    for (Index i = 0; i < m; ++i)
      for (Index j = c0; j < c1; ++j)
        n->value[i * c + j] = (xn->value[i * c + j] - mean) * inv;
  }
  if (wants_backward(g, n)) {
    Index cpg = channels_per_group;
    n->backward = [xn, n, inv_std, m, c, cpg, groups, count] {
      for (Index gi = 0; gi < groups; ++gi) {
        Index c0 = gi * cpg, c1 = c0 + cpg;
        double sum_g = 0.0, sum_gy = 0.0;
        for (Index i = 0; i < m; ++i)
          for (Index j = c0; j < c1; ++j) {
            double go = n->grad[i * c + j];
            sum_g += go;
            sum_gy += go * n->value[i * c + j];
          }
        double mg = sum_g / count, mgy = sum_gy / count;
        double inv = (*inv_std)[gi];
        for (Index i = 0; i < m; ++i)
          for (Index j = c0; j < c1; ++j)
            xn->grad[i * c + j] +=
                inv * (n->grad[i * c + j] - mg - n->value[i * c + j] * mgy);
      }
    };
  }
  return Tensor(n);
}

Tensor layer_norm(Tensor x, double eps) {
  Index m = x.ndim() == 2 ? x.rows() : 1;
  Index c = x.ndim() == 2 ? x.cols() : x.size();
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("layer_norm", x.shape(), {xn});
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
  double count = static_cast<double>(c);
  for (Index i = 0; i < m; ++i) {
    const double* xr = xn->value.data() + i * c;
    double mean = 0.0;
    for (Index j = 0; j < c; ++j) mean += xr[j];
    mean /= count;
    double var = 0.0;
    for (Index j = 0; j < c; ++j) {
      double d = xr[j] - mean;
      var += d * d;
    }
    var /= count;
    double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (Index j = 0; j < c; ++j) n->value[i * c + j] = (xr[j] - mean) * inv;
  }
  if (wants_backward(g, n)) {
    n->backward = [xn, n, inv_std, m, c, count] {
      for (Index i = 0; i < m; ++i) {
        const double* y = n->value.data() + i * c;
        const double* go = n->grad.data() + i * c;
        double sum_g = 0.0, sum_gy = 0.0;
        for (Index j = 0; j < c; ++j) {
          sum_g += go[j];
          sum_gy += go[j] * y[j];
        }
        double mg = sum_g / count, mgy = sum_gy / count;
        double inv = (*inv_std)[i];
        double* gx = xn->grad.data() + i * c;
        for (Index j = 0; j < c; ++j) gx[j] += inv * (go[j] - mg - y[j] * mgy);
      }
    };
  }
  return Tensor(n);
}

Tensor embedding_rows(Tensor table, std::span<const std::int32_t> ids) {
  check_2d("embedding_rows", table);
  Index v = table.rows(), d = table.cols();
  Index m = static_cast<Index>(ids.size());
  for (std::int32_t id : ids)
    if (id < 0 || id >= v)
      fail(ErrorKind::input, "embedding_rows: id " + std::to_string(id) +
                                 " outside table of " + std::to_string(v) + " rows");
  Graph& g = table.graph();
  Node* tn = table.node();
  Node* n = g.make("embedding_rows", {m, d}, {tn});
  for (Index i = 0; i < m; ++i) {
    const double* src = tn->value.data() + static_cast<Index>(ids[i]) * d;
    std::copy(src, src + d, n->value.data() + i * d);
  }
  if (wants_backward(g, n)) {
    auto ids_copy = std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
    n->backward = [tn, n, ids_copy, d] {
      for (std::size_t i = 0; i < ids_copy->size(); ++i) {
        double* dst = tn->grad.data() + static_cast<Index>((*ids_copy)[i]) * d;
        const double* src = n->grad.data() + static_cast<Index>(i) * d;
        for (Index j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return Tensor(n);
}

Tensor frame_gather_op(Tensor x, Index kernel, Index stride, Index pad_left, Index rows) {
  check_2d("frame_gather", x);
  if (kernel <= 0 || stride <= 0 || rows < 0)
    fail(ErrorKind::config, "frame_gather: bad geometry");
  Index len = x.rows(), ch = x.cols();
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("frame_gather", {rows, kernel * ch}, {xn});
  kernels::frame_gather(xn->value.data(), len, ch, kernel, stride, pad_left, rows, n->value.data());
  if (wants_backward(g, n)) {
    n->backward = [xn, n, len, ch, kernel, stride, pad_left, rows] {
      kernels::frame_scatter_add(xn->grad.data(), len, ch, kernel, stride, pad_left, rows,
                                 n->grad.data());
    };
  }
  return Tensor(n);
}

Tensor overlap_add_op(Tensor u, Index kernel, Index stride, Index pad_left, Index len_out) {
  check_2d("overlap_add", u);
  if (kernel <= 0 || stride <= 0 || len_out < 0 || u.cols() % kernel != 0)
    fail(ErrorKind::config, "overlap_add: bad geometry for " + shape_str(u.shape()));
  Index rows_in = u.rows(), ch = u.cols() / kernel;
  Graph& g = u.graph();
  Node* un = u.node();
  Node* n = g.make("overlap_add", {len_out, ch}, {un});
  kernels::overlap_add(un->value.data(), rows_in, ch, kernel, stride, pad_left, len_out,
                       n->value.data());
  if (wants_backward(g, n)) {
    n->backward = [un, n, rows_in, ch, kernel, stride, pad_left, len_out] {
      kernels::overlap_add_adjoint(n->grad.data(), len_out, ch, kernel, stride, pad_left,
                                   rows_in, un->grad.data());
    };
  }
  return Tensor(n);
}

Tensor concat_cols(std::span<const Tensor> xs) {
  if (xs.empty()) fail(ErrorKind::contract, "concat_cols: empty input");
  Index m = xs[0].rows(), total = 0;
  std::vector<Node*> parents;
  for (const Tensor& t : xs) {
    if (t.ndim() != 2 || t.rows() != m)
      fail(ErrorKind::dimension, "concat_cols: row mismatch at " + shape_str(t.shape()));
    total += t.cols();
    parents.push_back(t.node());
  }
  Graph& g = xs[0].graph();
  Node* n = g.make("concat_cols", {m, total}, parents);
  Index off = 0;
  for (const Tensor& t : xs) {
    Index c = t.cols();
    for (Index i = 0; i < m; ++i)
      std::copy(t.node()->value.data() + i * c, t.node()->value.data() + (i + 1) * c,
                n->value.data() + i * total + off);
    off += c;
  }
  if (wants_backward(g, n)) {
    auto parts = std::make_shared<std::vector<Node*>>(parents);
    n->backward = [n, parts, m, total] {
      Index off2 = 0;
      for (Node* p : *parts) {
        Index c = p->cols();
        if (p->requires_grad)
          for (Index i = 0; i < m; ++i)
            for (Index j = 0; j < c; ++j)
              p->grad[i * c + j] += n->grad[i * total + off2 + j];
        off2 += c;
      }
    };
  }
  return Tensor(n);
}

Tensor concat_rows(std::span<const Tensor> xs) {
  if (xs.empty()) fail(ErrorKind::contract, "concat_rows: empty input");
  Index c = xs[0].cols(), total = 0;
  std::vector<Node*> parents;
  for (const Tensor& t : xs) {
    if (t.ndim() != 2 || t.cols() != c)
      fail(ErrorKind::dimension, "concat_rows: column mismatch at " + shape_str(t.shape()));
    total += t.rows();
    parents.push_back(t.node());
  }
  Graph& g = xs[0].graph();
  Node* n = g.make("concat_rows", {total, c}, parents);
  Index off = 0;
  for (const Tensor& t : xs) {
    std::copy(t.value().begin(), t.value().end(), n->value.begin() + off * c);
    off += t.rows();
  }
  if (wants_backward(g, n)) {
    auto parts = std::make_shared<std::vector<Node*>>(parents);
    n->backward = [n, parts, c] {
      Index off2 = 0;
      for (Node* p : *parts) {
        Index r = p->rows();
        if (p->requires_grad)
          for (Index i = 0; i < r * c; ++i) p->grad[i] += n->grad[off2 * c + i];
        off2 += r;
      }
    };
  }
  return Tensor(n);
}

Tensor slice_cols(Tensor x, Index c0, Index c1) {
  check_2d("slice_cols", x);
  Index m = x.rows(), c = x.cols();
  if (c0 < 0 || c1 > c || c0 >= c1)
    fail(ErrorKind::dimension, "slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                                   ") invalid for " + shape_str(x.shape()));
  Index w = c1 - c0;
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("slice_cols", {m, w}, {xn});
  for (Index i = 0; i < m; ++i)
    std::copy(xn->value.data() + i * c + c0, xn->value.data() + i * c + c1, n->value.data() + i * w);
  if (wants_backward(g, n)) {
    n->backward = [xn, n, m, c, c0, w] {
      for (Index i = 0; i < m; ++i)
        for (Index j = 0; j < w; ++j) xn->grad[i * c + c0 + j] += n->grad[i * w + j];
    };
  }
  return Tensor(n);
}

Tensor slice_rows(Tensor x, Index r0, Index r1) {
  check_2d("slice_rows", x);
  Index m = x.rows(), c = x.cols();
  if (r0 < 0 || r1 > m || r0 >= r1)
    fail(ErrorKind::dimension, "slice_rows: range [" + std::to_string(r0) + ", " + std::to_string(r1) +
                                   ") invalid for " + shape_str(x.shape()));
  Index h = r1 - r0;
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("slice_rows", {h, c}, {xn});
  std::copy(xn->value.data() + r0 * c, xn->value.data() + r1 * c, n->value.data());
  if (wants_backward(g, n)) {
    n->backward = [xn, n, c, r0, h] {
      for (Index i = 0; i < h * c; ++i) xn->grad[r0 * c + i] += n->grad[i];
    };
  }
  return Tensor(n);
}

Tensor stop_gradient(Tensor x) {
  Graph& g = x.graph();
  Node* n = g.make("stop_gradient", x.shape(), {});
  n->value = x.node()->value;
  return Tensor(n);
}

Tensor pass_through(Tensor value_of, Tensor grad_to) {
  check_same_shape("pass_through", value_of, grad_to);
  if (&value_of.graph() != &grad_to.graph())
    fail(ErrorKind::contract, "pass_through: tensors belong to different graphs");
  Graph& g = grad_to.graph();
  Node* tn = grad_to.node();
  Node* n = g.make("pass_through", value_of.shape(), {tn});
  n->value = value_of.node()->value;
  if (wants_backward(g, n)) {
    n->backward = [tn, n] {
      for (std::size_t i = 0; i < n->grad.size(); ++i) tn->grad[i] += n->grad[i];
    };
  }
  return Tensor(n);
}

Tensor reshape(Tensor x, Shape shape) {
  if (shape_size(shape) != x.size())
    fail(ErrorKind::dimension, "reshape: size of " + shape_str(x.shape()) + " does not match " +
                                   shape_str(shape));
  Graph& g = x.graph();
  Node* xn = x.node();
  Node* n = g.make("reshape", std::move(shape), {xn});
  n->value = xn->value;
  if (wants_backward(g, n)) {
    n->backward = [xn, n] {
      for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += n->grad[i];
    };
  }
  return Tensor(n);
}

}  // namespace mqtts
