#pragma once

#include <array>
#include <vector>

#include "lda/conv.hpp"
#include "lda/rng.hpp"
#include "lda/tensor.hpp"

namespace lda {

// Smoothed rectifier: zero for t <= -delta, identity for t >= delta, and the
// quadratic stitch t^2/(4 delta) + t/2 + delta/4 in between.  C^1 everywhere
// with derivative in [0,1]; the second derivative is 1/(2 delta) inside the
// stitch band and 0 outside, which is what the Jacobian-Lipschitz bound uses.
inline double smoothed_relu(double t, double delta) {
    if (t <= -delta) return 0.0;
    if (t >= delta) return t;
    return t * t / (4.0 * delta) + 0.5 * t + 0.25 * delta;
}
inline double smoothed_relu_d1(double t, double delta) {
    if (t <= -delta) return 0.0;
    if (t >= delta) return 1.0;
    return t / (2.0 * delta) + 0.5;
}
inline double smoothed_relu_d2(double t, double delta) {
    if (t <= -delta || t >= delta) return 0.0;
    return 1.0 / (2.0 * delta);
}

// m feature vectors of dimension d, block-contiguous: v[i*d + j] is
// component j of block i.  For image-shaped maps block i is pixel i in
// row-major order, so the buffer doubles as an h x w x d tensor.
struct BlockVectors {
    int blocks = 0;
    int dim = 0;
    std::vector<double> v;

    BlockVectors() = default;
    BlockVectors(int m, int d) : blocks(m), dim(d), v(static_cast<std::size_t>(m) * d, 0.0) {}

    double* block(int i) { return &v[static_cast<std::size_t>(i) * dim]; }
    const double* block(int i) const { return &v[static_cast<std::size_t>(i) * dim]; }

    double block_norm(int i) const {
        double s = 0.0;
        const double* p = block(i);
        for (int j = 0; j < dim; ++j) s += p[j] * p[j];
        return std::sqrt(s);
    }
};

double dot(const BlockVectors& a, const BlockVectors& b);

enum class MapKind { identity, finite_difference, conv_net };

// Weights of the 4-layer convolutional feature extractor
// (1 -> width -> width -> width -> width channels, 3x3, no bias).
struct ConvNetParams {
    std::array<ConvKernel, 4> layers;
    double delta = 0.01;
    int width = 0;

    // Xavier-uniform initialization, U(-a, a) with a = sqrt(6/(fan_in+fan_out))
    // and fan counted over the 3x3 receptive field.
    static ConvNetParams xavier(int width, Rng& rng);
};

// One forward pass with enough cached state to replay Jacobian products
// without recomputing the net: pre-activation outputs a[l] and activations
// h[0..4], where h[0] is the input image and g = h[4] viewed blockwise.
struct FeatureEval {
    BlockVectors g;
    std::vector<Tensor> h;
    std::vector<Tensor> a;
};

// Feature extractor g mapping an h x w image to m = h*w feature vectors of
// dimension d.  Three variants share one interface:
//   identity           d = 1, g_i = x_i              (plain l1-style blocks)
//   finite_difference  d = 2, forward differences    (isotropic TV blocks)
//   conv_net           d = width, 4-layer smoothed-ReLU conv net (learnable)
class FeatureMap {
public:
    static FeatureMap identity(int h, int w);
    static FeatureMap finite_difference(int h, int w);
    static FeatureMap conv_net(int h, int w, ConvNetParams params);

    MapKind kind() const { return kind_; }
    int image_height() const { return h_; }
    int image_width() const { return w_; }
    int blocks() const { return m_; }
    int dim() const { return d_; }

    BlockVectors forward(const Tensor& x) const;
    FeatureEval forward_eval(const Tensor& x) const;

    // Transposed-Jacobian product y -> J(x)^T y.
    Tensor vjp(const Tensor& x, const BlockVectors& y) const;
    Tensor vjp_from(const FeatureEval& e, const BlockVectors& y) const;

    // Jacobian product t -> J(x) t.
    BlockVectors jvp(const Tensor& x, const Tensor& t) const;
    BlockVectors jvp_from(const FeatureEval& e, const Tensor& t) const;

    // Upper bound on sup_x ||J(x)||: exact singular value for the linear
    // variants, product of per-layer operator norms (activation slopes <= 1)
    // for the conv net.  Power iteration uses the supplied generator.
    double jacobian_norm_bound(Rng& rng) const;

    // Upper bound on the Lipschitz constant of x -> J(x): zero for the linear
    // variants; for the conv net the layer recurrence
    //   C_l = ||W_l||^2 S_{l-1}^2 / (2 delta) + ||W_l|| C_{l-1},
    //   S_l = S_{l-1} ||W_l||
    // with C_0 = 0, S_0 = 1, whose final value bounds the curvature
    // introduced by the smoothed rectifier.  Deterministic (pinned internal
    // seed for the layer norms).
    double jacobian_lipschitz_bound() const;

    const ConvNetParams& params() const;
    ConvNetParams& params();

private:
    FeatureMap(MapKind kind, int h, int w, int d);

    std::array<double, 4> layer_norms(Rng& rng) const;

    MapKind kind_;
    int h_, w_, m_, d_;
    ConvNetParams net_;
};

}  // namespace lda
