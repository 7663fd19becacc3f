#pragma once

#include <functional>

#include "lwa/tensor.hpp"

namespace lwa {

// c[i][j] = sum_p a[i][p] * b[p][j]
Tensor matmul(const Tensor& a, const Tensor& b);
// a^T * b, with a [k x m]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a * b^T, with b [n x k]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Numerically stable softmax along `axis` (max-subtraction).
Tensor softmax(const Tensor& x, std::size_t axis);
// Row softmax on a matrix; the common case in the attention ops.
Tensor softmax_rows(const Tensor& x);
// dx given y = softmax_rows(x) and upstream dy.
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

enum class Activation { None, Silu };
Activation activation_from_string(const std::string& s);
std::string activation_to_string(Activation a);

double silu(double x);
double silu_grad(double x);
Tensor apply_activation(const Tensor& x, Activation act);
// dx = dy .* act'(x)
Tensor activation_backward(const Tensor& x, const Tensor& dy, Activation act);

// Per-channel spatial convolution, zero padding, no cross-channel mixing.
// x: [C x H x W], kernel: [C x K x K].
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernel, std::size_t stride,
                        std::size_t padding);
void depthwise_conv2d_backward(const Tensor& x, const Tensor& kernel, std::size_t stride,
                               std::size_t padding, const Tensor& dy, Tensor& dx, Tensor& dkernel);

// 1x1 convolution: per-pixel linear map across channels.
// x: [C x H x W], kernel: [C' x C].
Tensor pointwise_conv2d(const Tensor& x, const Tensor& kernel);
void pointwise_conv2d_backward(const Tensor& x, const Tensor& kernel, const Tensor& dy, Tensor& dx,
                               Tensor& dkernel);

// Central finite differences, the repo's gradient oracle.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-5);

// ||a - b|| / (||a|| + ||b||); the gradcheck comparison. Zero-vs-zero is 0.
double grad_rel_err(const Tensor& a, const Tensor& b);

}  // namespace lwa
