#pragma once

#include <functional>
#include <span>

#include "mqtts/tensor.hpp"

namespace mqtts {

// Builds a scalar loss from a leaf bound to the checked variable. Called once
// on a recording graph for the analytic gradient and repeatedly on forward
// graphs for central differences.
using ScalarFn = std::function<Tensor(Graph&, Tensor)>;

struct FdOptions {
  double h = 1e-4;
  // coordinates failing at h are retried at refine_h before counting; this
  // separates genuine gradient bugs from curvature or a kink inside the step
  double refine_h = 1e-6;
  double tol = 1e-4;
};

// max elementwise relative error between analytic and central-difference
// gradients of f at x0
double finite_diff_check(const ScalarFn& f, const Shape& shape,
                         std::span<const double> x0, const FdOptions& opt = {});

double fd_rel_error(double a, double b);

}  // namespace mqtts
