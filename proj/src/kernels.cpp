#include "mqtts/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mqtts::kernels {

Config& config() {
  static Config cfg;
  return cfg;
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

inline Index floor_div(Index a, Index b) {
  Index q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline Index ceil_div(Index a, Index b) { return -floor_div(-a, b); }

// one output row of each gemm variant; inner reduction order is fixed so the
// result does not depend on how rows are scheduled across threads
[[gnu::noinline]] void gemm_row(bool trans_a, bool trans_b, Index i, Index m, Index n,
                     Index k, const double* a, const double* b, double* c,
                     bool accumulate) {
  double* crow = c + i * n;
  if (!trans_a && !trans_b) {
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * k;
    for (Index kk = 0; kk < k; ++kk) {
      double aik = arow[kk];
      const double* brow = b + kk * n;
      for (Index j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  } else if (!trans_a && trans_b) {
    const double* arow = a + i * k;
    for (Index j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (Index kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
      crow[j] = accumulate ? crow[j] + s : s;
    }
  } else if (trans_a && !trans_b) {
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (Index kk = 0; kk < k; ++kk) {
      double aki = a[kk * m + i];
      const double* brow = b + kk * n;
      for (Index j = 0; j < n; ++j) crow[j] += aki * brow[j];
    }
  } else {
    for (Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Index kk = 0; kk < k; ++kk) s += a[kk * m + i] * b[j * k + kk];
      crow[j] = accumulate ? crow[j] + s : s;
    }
  }
}

[[gnu::noinline]] void frame_gather_row(Index r, const double* in, Index len, Index ch,
                             Index kernel, Index stride, Index pad_left,
                             double* out) {
  double* orow = out + r * kernel * ch;
  for (Index t = 0; t < kernel; ++t) {
    Index src = r * stride + t - pad_left;
    double* dst = orow + t * ch;
    if (src >= 0 && src < len) {
      const double* s = in + src * ch;
      std::copy(s, s + ch, dst);
    } else {
      std::fill(dst, dst + ch, 0.0);
    }
  }
}

// all frames r whose tap t covers input/output position p, in ascending r
template <typename Fn>
inline void for_covering_frames(Index p, Index kernel, Index stride,
                                Index pad_left, Index rows, Fn&& fn) {
  Index r_lo = std::max<Index>(0, ceil_div(p + pad_left - kernel + 1, stride));
  Index r_hi = std::min<Index>(rows - 1, floor_div(p + pad_left, stride));
  for (Index r = r_lo; r <= r_hi; ++r) {
    Index t = p + pad_left - r * stride;
    fn(r, t);
  }
}

[[gnu::noinline]] void scatter_add_pos(Index p, double* in_grad, Index ch, Index kernel,
                            Index stride, Index pad_left, Index rows,
                            const double* out_grad) {
  double* dst = in_grad + p * ch;
  for_covering_frames(p, kernel, stride, pad_left, rows, [&](Index r, Index t) {
    const double* src = out_grad + r * kernel * ch + t * ch;
    for (Index c = 0; c < ch; ++c) dst[c] += src[c];
  });
}

[[gnu::noinline]] void overlap_add_pos(Index p, const double* u, Index ch, Index kernel,
                            Index stride, Index pad_left, Index rows_in,
                            double* out) {
  double* dst = out + p * ch;
  for_covering_frames(p, kernel, stride, pad_left, rows_in,
                      [&](Index r, Index t) {
                        const double* src = u + r * kernel * ch + t * ch;
                        for (Index c = 0; c < ch; ++c) dst[c] += src[c];
                      });
}

[[gnu::noinline]] void overlap_add_adjoint_row(Index r, const double* out_grad,
                                    Index len_out, Index ch, Index kernel,
                                    Index stride, Index pad_left,
                                    double* u_grad) {
  double* urow = u_grad + r * kernel * ch;
  for (Index t = 0; t < kernel; ++t) {
    Index p = r * stride + t - pad_left;
    if (p < 0 || p >= len_out) continue;
    const double* src = out_grad + p * ch;
    double* dst = urow + t * ch;
    for (Index c = 0; c < ch; ++c) dst[c] += src[c];
  }
}

[[gnu::noinline]] void nearest_codes_row(Index t, const double* z, Index groups,
                              Index gdim, const double* books, Index k,
                              std::int32_t* codes_out) {
  const double* zrow = z + t * groups * gdim;
  for (Index g = 0; g < groups; ++g) {
    const double* zg = zrow + g * gdim;
    const double* book = books + g * k * gdim;
    double best = 0.0;
    Index best_i = 0;
    for (Index i = 0; i < k; ++i) {
      const double* e = book + i * gdim;
      double d = 0.0;
      for (Index c = 0; c < gdim; ++c) {
        double diff = zg[c] - e[c];
        d += diff * diff;
      }
      if (i == 0 || d < best) {
        best = d;
        best_i = i;
      }
    }
    codes_out[t * groups + g] = static_cast<std::int32_t>(best_i);
  }
}

[[gnu::noinline]] void softmax_row(Index r, const double* in, Index cols, double* out) {
  const double* x = in + r * cols;
  double* y = out + r * cols;
  double m = x[0];
  for (Index j = 1; j < cols; ++j)
    if (x[j] > m) m = x[j];
  double s = 0.0;
  for (Index j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - m);
    s += y[j];
  }
  double inv = 1.0 / s;
  for (Index j = 0; j < cols; ++j) y[j] *= inv;
}

}  // namespace

namespace serial {

void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k,
          const double* a, const double* b, double* c, bool accumulate) {
  for (Index i = 0; i < m; ++i)
    gemm_row(trans_a, trans_b, i, m, n, k, a, b, c, accumulate);
}

void frame_gather(const double* in, Index len, Index ch, Index kernel,
                  Index stride, Index pad_left, Index rows, double* out) {
  for (Index r = 0; r < rows; ++r)
    frame_gather_row(r, in, len, ch, kernel, stride, pad_left, out);
}

void frame_scatter_add(double* in_grad, Index len, Index ch, Index kernel,
                       Index stride, Index pad_left, Index rows,
                       const double* out_grad) {
  for (Index p = 0; p < len; ++p)
    scatter_add_pos(p, in_grad, ch, kernel, stride, pad_left, rows, out_grad);
}

void overlap_add(const double* u, Index rows_in, Index ch, Index kernel,
                 Index stride, Index pad_left, Index len_out, double* out) {
  for (Index p = 0; p < len_out; ++p)
    overlap_add_pos(p, u, ch, kernel, stride, pad_left, rows_in, out);
}

void overlap_add_adjoint(const double* out_grad, Index len_out, Index ch,
                         Index kernel, Index stride, Index pad_left,
                         Index rows_in, double* u_grad) {
  for (Index r = 0; r < rows_in; ++r)
    overlap_add_adjoint_row(r, out_grad, len_out, ch, kernel, stride, pad_left,
                            u_grad);
}

void nearest_codes(const double* z, Index t, Index groups, Index gdim,
                   const double* books, Index k, std::int32_t* codes_out) {
  for (Index i = 0; i < t; ++i)
    nearest_codes_row(i, z, groups, gdim, books, k, codes_out);
}

void softmax_rows(const double* in, Index rows, Index cols, double* out) {
  for (Index r = 0; r < rows; ++r) softmax_row(r, in, cols, out);
}

}  // namespace serial

namespace omp {

void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k,
          const double* a, const double* b, double* c, bool accumulate) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < m; ++i)
    gemm_row(trans_a, trans_b, i, m, n, k, a, b, c, accumulate);
#else
  serial::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate);
#endif
}

void frame_gather(const double* in, Index len, Index ch, Index kernel,
                  Index stride, Index pad_left, Index rows, double* out) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r)
    frame_gather_row(r, in, len, ch, kernel, stride, pad_left, out);
#else
  serial::frame_gather(in, len, ch, kernel, stride, pad_left, rows, out);
#endif
}

void frame_scatter_add(double* in_grad, Index len, Index ch, Index kernel,
                       Index stride, Index pad_left, Index rows,
                       const double* out_grad) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < len; ++p)
    scatter_add_pos(p, in_grad, ch, kernel, stride, pad_left, rows, out_grad);
#else
  serial::frame_scatter_add(in_grad, len, ch, kernel, stride, pad_left, rows,
                            out_grad);
#endif
}

void overlap_add(const double* u, Index rows_in, Index ch, Index kernel,
                 Index stride, Index pad_left, Index len_out, double* out) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < len_out; ++p)
    overlap_add_pos(p, u, ch, kernel, stride, pad_left, rows_in, out);
#else
  serial::overlap_add(u, rows_in, ch, kernel, stride, pad_left, len_out, out);
#endif
}

void overlap_add_adjoint(const double* out_grad, Index len_out, Index ch,
                         Index kernel, Index stride, Index pad_left,
                         Index rows_in, double* u_grad) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows_in; ++r)
    overlap_add_adjoint_row(r, out_grad, len_out, ch, kernel, stride, pad_left,
                            u_grad);
#else
  serial::overlap_add_adjoint(out_grad, len_out, ch, kernel, stride, pad_left,
                              rows_in, u_grad);
#endif
}

void nearest_codes(const double* z, Index t, Index groups, Index gdim,
                   const double* books, Index k, std::int32_t* codes_out) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < t; ++i)
    nearest_codes_row(i, z, groups, gdim, books, k, codes_out);
#else
  serial::nearest_codes(z, t, groups, gdim, books, k, codes_out);
#endif
}

void softmax_rows(const double* in, Index rows, Index cols, double* out) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) softmax_row(r, in, cols, out);
#else
  serial::softmax_rows(in, rows, cols, out);
#endif
}

}  // namespace omp

void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k,
          const double* a, const double* b, double* c, bool accumulate) {
  if (config().parallel)
    omp::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate);
  else
    serial::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate);
}

void frame_gather(const double* in, Index len, Index ch, Index kernel,
                  Index stride, Index pad_left, Index rows, double* out) {
  if (config().parallel)
    omp::frame_gather(in, len, ch, kernel, stride, pad_left, rows, out);
  else
    serial::frame_gather(in, len, ch, kernel, stride, pad_left, rows, out);
}

void frame_scatter_add(double* in_grad, Index len, Index ch, Index kernel,
                       Index stride, Index pad_left, Index rows,
                       const double* out_grad) {
  if (config().parallel)
    omp::frame_scatter_add(in_grad, len, ch, kernel, stride, pad_left, rows,
                           out_grad);
  else
    serial::frame_scatter_add(in_grad, len, ch, kernel, stride, pad_left, rows,
                              out_grad);
}

void overlap_add(const double* u, Index rows_in, Index ch, Index kernel,
                 Index stride, Index pad_left, Index len_out, double* out) {
  if (config().parallel)
    omp::overlap_add(u, rows_in, ch, kernel, stride, pad_left, len_out, out);
  else
    serial::overlap_add(u, rows_in, ch, kernel, stride, pad_left, len_out, out);
}

void overlap_add_adjoint(const double* out_grad, Index len_out, Index ch,
                         Index kernel, Index stride, Index pad_left,
                         Index rows_in, double* u_grad) {
  if (config().parallel)
    omp::overlap_add_adjoint(out_grad, len_out, ch, kernel, stride, pad_left,
                             rows_in, u_grad);
  else
    serial::overlap_add_adjoint(out_grad, len_out, ch, kernel, stride, pad_left,
                                rows_in, u_grad);
}

void nearest_codes(const double* z, Index t, Index groups, Index gdim,
                   const double* books, Index k, std::int32_t* codes_out) {
  if (config().parallel)
    omp::nearest_codes(z, t, groups, gdim, books, k, codes_out);
  else
    serial::nearest_codes(z, t, groups, gdim, books, k, codes_out);
}

void softmax_rows(const double* in, Index rows, Index cols, double* out) {
  if (config().parallel)
    omp::softmax_rows(in, rows, cols, out);
  else
    serial::softmax_rows(in, rows, cols, out);
}

}  // namespace mqtts::kernels
