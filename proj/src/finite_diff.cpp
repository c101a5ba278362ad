#include "mqtts/finite_diff.hpp"

#include <cmath>
#include <vector>

namespace mqtts {

double fd_rel_error(double a, double b) {
  double m = std::max(std::fabs(a), std::fabs(b));
  if (m < 1e-7) return 0.0;
  return std::fabs(a - b) / m;
}

namespace {

double eval_at(const ScalarFn& f, const Shape& shape, std::span<const double> x) {
  Graph g(false);
  Tensor leaf = g.leaf(shape, x);
  Tensor loss = f(g, leaf);
  return loss.scalar();
}

double central_diff(const ScalarFn& f, const Shape& shape,
                    std::vector<double>& x, std::size_t i, double h) {
  double saved = x[i];
  x[i] = saved + h;
  double up = eval_at(f, shape, x);
  x[i] = saved - h;
  double down = eval_at(f, shape, x);
  x[i] = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace

double finite_diff_check(const ScalarFn& f, const Shape& shape,
                         std::span<const double> x0, const FdOptions& opt) {
  Graph g(true);
  Tensor leaf = g.leaf(shape, x0, true);
  Tensor loss = f(g, leaf);
  if (loss.size() != 1)
    fail(ErrorKind::contract, "finite_diff_check: loss is not scalar");
  Tensor leaves[] = {leaf};
  GradMap gm = g.grad(loss, leaves);
  const std::vector<double>& analytic = gm.at(leaf.node());

  std::vector<double> x(x0.begin(), x0.end());
  double max_err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double fd = central_diff(f, shape, x, i, opt.h);
    double err = fd_rel_error(analytic[i], fd);
    if (err > opt.tol) {
      fd = central_diff(f, shape, x, i, opt.refine_h);
      err = std::min(err, fd_rel_error(analytic[i], fd));
    }
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace mqtts
