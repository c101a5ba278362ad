#pragma once

#include <span>

#include "mqtts/tensor.hpp"

namespace mqtts {

// Differentiable primitives. 1-D and 2-D tensors; the only broadcasts are a
// row vector over matrix rows and a column vector over matrix columns.

Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor scale(Tensor a, double s);
Tensor add_scalar(Tensor a, double s);
Tensor neg(Tensor a);

// x is (M x C); v has C entries; w has M entries
Tensor add_rowvec(Tensor x, Tensor v);
Tensor mul_rowvec(Tensor x, Tensor v);
Tensor mul_colvec(Tensor x, Tensor w);
// (M x C) pairs of rows -> (M x 1) dot products
Tensor rowwise_dot(Tensor a, Tensor b);

Tensor matmul(Tensor a, Tensor b);
// a (M x K) times b (N x K) transposed -> (M x N)
Tensor matmul_nt(Tensor a, Tensor b);
Tensor transpose(Tensor x);

Tensor relu(Tensor x);
Tensor leaky_relu(Tensor x, double alpha);
Tensor tanh_act(Tensor x);
Tensor exp_act(Tensor x);
Tensor log_act(Tensor x);
Tensor abs_act(Tensor x);
Tensor clamp_min(Tensor x, double lo);

// axis 0 or 1 for 2-D (axis 1 = each row), axis 0 for 1-D
Tensor softmax(Tensor x, int axis);
// summed token NLL over rows of logits (M x V) against ids[M]
Tensor cross_entropy_sum(Tensor logits, std::span<const std::int32_t> ids);

Tensor sum_all(Tensor x);
Tensor mean_all(Tensor x);

// x (T x C) or (C); statistics per group of channels_per_group channels
Tensor group_norm(Tensor x, Index channels_per_group, double eps);
// x (M x C); statistics per row
Tensor layer_norm(Tensor x, double eps);

Tensor embedding_rows(Tensor table, std::span<const std::int32_t> ids);

// x (L x C) -> (rows x kernel*C) sliding windows; zero padding outside
Tensor frame_gather_op(Tensor x, Index kernel, Index stride, Index pad_left, Index rows);
// u (L x kernel*C), columns ordered [tap, channel] -> (len_out x C) overlap-add
Tensor overlap_add_op(Tensor u, Index kernel, Index stride, Index pad_left, Index len_out);

Tensor concat_cols(std::span<const Tensor> xs);
Tensor concat_rows(std::span<const Tensor> xs);
Tensor slice_cols(Tensor x, Index c0, Index c1);
Tensor slice_rows(Tensor x, Index r0, Index r1);

Tensor stop_gradient(Tensor x);
// forward value copied from value_of; backward passes the incoming gradient
// to grad_to unchanged (value_of is treated as a constant)
Tensor pass_through(Tensor value_of, Tensor grad_to);
Tensor reshape(Tensor x, Shape shape);

}  // namespace mqtts
