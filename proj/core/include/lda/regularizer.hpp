#pragma once

#include <array>
#include <vector>

#include "lda/feature_map.hpp"
#include "lda/tensor.hpp"

namespace lda {

// Group sparsity seminorm: sum over blocks of the Euclidean block norm.
double l21_norm(const BlockVectors& g);

// Blocks at or below the smoothing radius ("small", where the smoothed dual
// is g_i/eps) versus strictly above it ("large", dual g_i/||g_i||).  Blocks
// exactly on the boundary count as small; both dual branches agree there, so
// the choice only fixes which formulas downstream derivatives use.
struct BlockPartition {
    std::vector<int> small;
    std::vector<int> large;
};
BlockPartition partition_blocks(const BlockVectors& g, double eps);

// Maximizer of <g, y> - eps/2 ||y||^2 over the product of unit balls:
// y_i = g_i/eps when ||g_i|| <= eps, else g_i/||g_i||.  Every block of the
// result has norm at most 1.
BlockVectors dual_maximizer(const BlockVectors& g, double eps);

// Value of that maximum: sum over small blocks of ||g_i||^2/(2 eps) plus sum
// over large blocks of ||g_i|| - eps/2.  A C^1 approximation of l21_norm
// from below, within m*eps/2 of it.
double smoothed_l21(const BlockVectors& g, double eps);

struct SandwichSlack {
    double lower;  // l21_norm(g) - smoothed_l21(g, eps)              >= 0
    double upper;  // smoothed_l21(g, eps) + m*eps/2 - l21_norm(g)    >= 0
};
SandwichSlack sandwich_slack(const BlockVectors& g, double eps);

// Gradient of x -> smoothed_l21(g(x), eps), i.e. J(x)^T y*(g(x)).
Tensor smoothed_l21_gradient(const FeatureMap& map, const Tensor& x, double eps);
Tensor smoothed_l21_gradient_from(const FeatureMap& map, const FeatureEval& e, double eps);

// Reverse-mode derivatives of the scalar s(x, W, eps) = <w, grad of the
// smoothed term at x>: wrt_x is the Hessian-vector product needed when a
// gradient step is itself differentiated, wrt_layers and wrt_eps feed
// training.  The block partition is frozen at the evaluation point.
struct GradPullback {
    Tensor wrt_x;
    std::array<ConvKernel, 4> wrt_layers;  // zero-size kernels for linear maps
    double wrt_eps = 0.0;
};
GradPullback smoothed_l21_gradient_pullback(const FeatureMap& map, const Tensor& x,
                                            const Tensor& w, double eps);

// Distance from -grad_f(x) to the generalized gradient of the unsmoothed
// group term at x, i.e. the norm of the smallest element of
//   grad_f(x) + sum_{large} J_i^T g_i/||g_i|| + sum_{small} J_i^T w_i
// over per-block weights w_i whose projection onto range(J_i) lies in the
// unit ball.  "Small" here means ||g_i(x)|| <= zero_tol.  Solved as a convex
// QP by projected gradient descent started at the smoothed-dual surrogate, so
// the result never exceeds the smoothed gradient norm at eps = zero_tol.
// Supports images up to 256 pixels (the block Jacobians are materialized).
double clarke_residual(const FeatureMap& map, const Tensor& x, const Tensor& grad_f,
                       double zero_tol);

}  // namespace lda
