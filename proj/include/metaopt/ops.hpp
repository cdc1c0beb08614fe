#pragma once

#include <functional>
#include <span>
#include <vector>

#include "metaopt/tensor.hpp"

namespace metaopt {

// Output geometry for stride-s convolution with TF-style SAME zero padding:
// out = ceil(in / stride), total padding split with the smaller half in front.
struct ConvGeom {
  std::int64_t hout, wout;
  std::int64_t pad_top, pad_left;
};
ConvGeom conv_same_geom(std::int64_t h, std::int64_t w, std::int64_t k, std::int64_t stride);

// in [B,C,H,W], w [Cout,C,K,K], bias [Cout] -> out [B,Cout,Hout,Wout].
// `out` is resized/overwritten; pass the same buffer across calls to avoid
// reallocating in training loops.
void conv2d_forward(const Tensor& in, const Tensor& w, const Tensor& bias, int stride, Tensor& out);

// Gradients w.r.t. input, weights and bias given d(loss)/d(out). All three
// outputs are overwritten.
void conv2d_backward(const Tensor& in, const Tensor& w, int stride, const Tensor& grad_out,
                     Tensor& grad_in, Tensor& grad_w, Tensor& grad_bias);

void relu_forward(const Tensor& in, Tensor& out);
// grad w.r.t. pre-activation; `in` is the pre-activation tensor.
void relu_backward(const Tensor& in, const Tensor& grad_out, Tensor& grad_in);

// [B,C,H,W] -> [B,C], mean over the spatial dims.
void spatial_mean_forward(const Tensor& in, Tensor& out);
void spatial_mean_backward(const Shape& in_shape, const Tensor& grad_out, Tensor& grad_in);

// in [B,D], w [D,K], bias [K] -> out [B,K].
void linear_forward(const Tensor& in, const Tensor& w, const Tensor& bias, Tensor& out);
void linear_backward(const Tensor& in, const Tensor& w, const Tensor& grad_out, Tensor& grad_in,
                     Tensor& grad_w, Tensor& grad_bias);

// Mean cross-entropy over the batch. Labels must lie in [0, K). If
// grad_logits is non-null it receives (softmax - onehot) / B.
double softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels,
                             Tensor* grad_logits);

void softmax_probs(const Tensor& logits, Tensor& probs);
int argmax_row(const Tensor& mat, std::int64_t row);

// Central-difference gradient of a scalar objective. Throws if the objective
// returns a non-finite value at any probe point.
std::vector<double> finite_diff_grad(const std::function<double(std::span<const double>)>& f,
                                     std::span<const double> params, double eps);

// ||a-b|| / max(||a||, ||b||, 1e-8); the floor only matters when both sides
// are identically zero.
double rel_err_norm(std::span<const double> a, std::span<const double> b);

}  // namespace metaopt
