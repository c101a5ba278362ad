#pragma once

#include <cstdint>

namespace mqtts::kernels {

using Index = std::int64_t;

// Runtime dispatch between the serial reference kernels and the OpenMP
// parallel ones. Both orders every per-output reduction identically, so
// results are bitwise equal regardless of path or thread count.
struct Config {
  bool parallel = true;
};

Config& config();
void set_threads(int n);
int max_threads();

// c (m x n) = op_a(a) * op_b(b); row-major contiguous buffers.
// op transposes when the flag is set: a is (m x k) plain or (k x m)
// transposed, b is (k x n) plain or (n x k) transposed.
// accumulate adds into c instead of overwriting.
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k,
          const double* a, const double* b, double* c, bool accumulate = false);

// Strided sliding-window gather: in is (len x ch), out is (rows x kernel*ch),
// out[r, t*ch + c] = in[r*stride + t - pad_left, c], zero outside [0, len).
void frame_gather(const double* in, Index len, Index ch, Index kernel,
                  Index stride, Index pad_left, Index rows, double* out);

// Adjoint of frame_gather: accumulates out_grad back onto in_grad.
void frame_scatter_add(double* in_grad, Index len, Index ch, Index kernel,
                       Index stride, Index pad_left, Index rows,
                       const double* out_grad);

// Overlap-add for transposed convolution: u is (rows_in x kernel*ch) with
// columns ordered [tap, channel]; out[p, c] += u[r, t*ch + c] wherever
// r*stride + t - pad_left == p. Computed as a gather over output positions.
void overlap_add(const double* u, Index rows_in, Index ch, Index kernel,
                 Index stride, Index pad_left, Index len_out, double* out);

// Adjoint of overlap_add (== frame_gather with the same geometry).
void overlap_add_adjoint(const double* out_grad, Index len_out, Index ch,
                         Index kernel, Index stride, Index pad_left,
                         Index rows_in, double* u_grad);

// Per-frame, per-group nearest codebook row. z is (t x groups*gdim); books is
// groups contiguous tables of (k x gdim); codes_out is (t x groups).
// Ties resolve to the lowest index.
void nearest_codes(const double* z, Index t, Index groups, Index gdim,
                   const double* books, Index k, std::int32_t* codes_out);

// Row-wise softmax, max-subtracted.
void softmax_rows(const double* in, Index rows, Index cols, double* out);

namespace serial {
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k,
          const double* a, const double* b, double* c, bool accumulate);
void frame_gather(const double* in, Index len, Index ch, Index kernel,
                  Index stride, Index pad_left, Index rows, double* out);
void frame_scatter_add(double* in_grad, Index len, Index ch, Index kernel,
                       Index stride, Index pad_left, Index rows,
                       const double* out_grad);
void overlap_add(const double* u, Index rows_in, Index ch, Index kernel,
                 Index stride, Index pad_left, Index len_out, double* out);
void overlap_add_adjoint(const double* out_grad, Index len_out, Index ch,
                         Index kernel, Index stride, Index pad_left,
                         Index rows_in, double* u_grad);
void nearest_codes(const double* z, Index t, Index groups, Index gdim,
                   const double* books, Index k, std::int32_t* codes_out);
void softmax_rows(const double* in, Index rows, Index cols, double* out);
}  // namespace serial

namespace omp {
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k,
          const double* a, const double* b, double* c, bool accumulate);
void frame_gather(const double* in, Index len, Index ch, Index kernel,
                  Index stride, Index pad_left, Index rows, double* out);
void frame_scatter_add(double* in_grad, Index len, Index ch, Index kernel,
                       Index stride, Index pad_left, Index rows,
                       const double* out_grad);
void overlap_add(const double* u, Index rows_in, Index ch, Index kernel,
                 Index stride, Index pad_left, Index len_out, double* out);
void overlap_add_adjoint(const double* out_grad, Index len_out, Index ch,
                         Index kernel, Index stride, Index pad_left,
                         Index rows_in, double* u_grad);
void nearest_codes(const double* z, Index t, Index groups, Index gdim,
                   const double* books, Index k, std::int32_t* codes_out);
void softmax_rows(const double* in, Index rows, Index cols, double* out);
}  // namespace omp

}  // namespace mqtts::kernels
