#pragma once

#include <cstdint>
#include <vector>

#include "mqtts/error.hpp"

namespace mqtts {

using Index = std::int64_t;

// Plain row-major matrix for graph-free computation (metrics, targets, I/O).
struct Mat {
  Index rows = 0;
  Index cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(Index r, Index c, double fill = 0.0) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), fill) {}

  double& at(Index r, Index c) { return v[static_cast<std::size_t>(r * cols + c)]; }
  double at(Index r, Index c) const { return v[static_cast<std::size_t>(r * cols + c)]; }
  double* row(Index r) { return v.data() + r * cols; }
  const double* row(Index r) const { return v.data() + r * cols; }
  Index size() const { return rows * cols; }
};

}  // namespace mqtts
