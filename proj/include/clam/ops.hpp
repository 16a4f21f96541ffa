#pragma once

#include "clam/tensor.hpp"

namespace clam {

// Explicit per-edge padding. The k=4 architecture needs asymmetric pads to
// keep the 64 -> 32 -> 32 -> 16 arithmetic exact.
struct Padding {
  int top = 0, left = 0, bottom = 0, right = 0;
  int vertical() const { return top + bottom; }
  int horizontal() const { return left + right; }
};

// Canonical configs for kernel size 4: stride 2 halves exactly, stride 1
// preserves the size.
inline Padding pad_halving() { return {1, 1, 1, 1}; }
inline Padding pad_same_k4() { return {1, 1, 2, 2}; }

// Cross-correlation. x: [N,Cin,H,W], w: [Cout,Cin,k,k], b: [Cout].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, Padding pad);

// Transpose of conv2d's linear map: inverts the paired conv2d's shape map when
// called with the same stride/padding. x: [N,Cin,h,w], w: [Cin,Cout,k,k].
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                        Padding pad);

// Affine map. x: [N,D], w: [D,J], b: [J].
Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);

// Elementwise x > 0 ? x : slope * x; subgradient at 0 is the slope.
Tensor leaky_relu(const Tensor& x, double slope);

// Sum over all images and pixels of squared differences.
Tensor mse_loss(const Tensor& x, const Tensor& rec);

Tensor reshape(const Tensor& x, Shape shape);
Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

// Student-t (one degree of freedom) soft assignment, rows normalized over
// clusters. z: [N,J], centroids: [K,J] -> q: [N,K].
Tensor soft_assign_op(const Tensor& z, const Tensor& centroids);

// KL(P||Q) with P treated as a constant target; gradient flows to q only.
Tensor kl_loss_op(const Tensor& p, const Tensor& q);

namespace detail {
// Grow-only thread-local scratch buffers for im2col/permute intermediates.
std::vector<double>& scratch(int slot, size_t n);
}  // namespace detail

}  // namespace clam
