#include "lda/regularizer.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include <Eigen/Dense>

namespace lda {

double l21_norm(const BlockVectors& g) {
    double s = 0.0;
    for (int i = 0; i < g.blocks; ++i) s += g.block_norm(i);
    return s;
}

BlockPartition partition_blocks(const BlockVectors& g, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("partition_blocks: eps must be positive");
    BlockPartition p;
    for (int i = 0; i < g.blocks; ++i)
        (g.block_norm(i) <= eps ? p.small : p.large).push_back(i);
    return p;
}

BlockVectors dual_maximizer(const BlockVectors& g, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("dual_maximizer: eps must be positive");
    BlockVectors y(g.blocks, g.dim);
    for (int i = 0; i < g.blocks; ++i) {
        const double n = g.block_norm(i);
        const double scale = n <= eps ? 1.0 / eps : 1.0 / n;
        const double* src = g.block(i);
        double* dst = y.block(i);
        for (int j = 0; j < g.dim; ++j) dst[j] = scale * src[j];
    }
    return y;
}

double smoothed_l21(const BlockVectors& g, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("smoothed_l21: eps must be positive");
    double s = 0.0;
    for (int i = 0; i < g.blocks; ++i) {
        const double n = g.block_norm(i);
        s += n <= eps ? n * n / (2.0 * eps) : n - 0.5 * eps;
    }
    return s;
}

SandwichSlack sandwich_slack(const BlockVectors& g, double eps) {
    const double r = l21_norm(g);
    const double re = smoothed_l21(g, eps);
    return {r - re, re + 0.5 * eps * g.blocks - r};
}

Tensor smoothed_l21_gradient(const FeatureMap& map, const Tensor& x, double eps) {
    return smoothed_l21_gradient_from(map, map.forward_eval(x), eps);
}

Tensor smoothed_l21_gradient_from(const FeatureMap& map, const FeatureEval& e, double eps) {
    return map.vjp_from(e, dual_maximizer(e.g, eps));
}

namespace {

// Blockwise action of the dual's derivative in g, transposed onto t:
//   small blocks:  t_i / eps
//   large blocks:  (t_i - ghat <ghat, t_i>) / ||g_i||
BlockVectors dual_jacobian_apply(const BlockVectors& g, const BlockVectors& t, double eps) {
    BlockVectors out(g.blocks, g.dim);
    for (int i = 0; i < g.blocks; ++i) {
        const double n = g.block_norm(i);
        const double* gi = g.block(i);
        const double* ti = t.block(i);
        double* oi = out.block(i);
        if (n <= eps) {
            for (int j = 0; j < g.dim; ++j) oi[j] = ti[j] / eps;
        } else {
            double gt = 0.0;
            for (int j = 0; j < g.dim; ++j) gt += gi[j] * ti[j];
            const double c = gt / (n * n);
            for (int j = 0; j < g.dim; ++j) oi[j] = (ti[j] - gi[j] * c) / n;
        }
    }
    return out;
}

double dual_eps_derivative_dot(const BlockVectors& g, const BlockVectors& t, double eps) {
    // <t, d y*/d eps>; only small blocks depend on eps, via y_i = g_i/eps.
    double s = 0.0;
    for (int i = 0; i < g.blocks; ++i) {
        if (g.block_norm(i) > eps) continue;
        const double* gi = g.block(i);
        const double* ti = t.block(i);
        double gt = 0.0;
        for (int j = 0; j < g.dim; ++j) gt += gi[j] * ti[j];
        s -= gt / (eps * eps);
    }
    return s;
}

Tensor blocks_as_image_stack(const BlockVectors& b, int h, int w) {
    Tensor t(h, w, b.dim);
    std::memcpy(t.data(), b.v.data(), b.v.size() * sizeof(double));
    return t;
}

}  // namespace

GradPullback smoothed_l21_gradient_pullback(const FeatureMap& map, const Tensor& x,
                                            const Tensor& w, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("gradient pullback: eps must be positive");
    GradPullback out;

    if (map.kind() != MapKind::conv_net) {
        // Constant Jacobian: s = <J w, y*(g)>, so the x-derivative is
        // J^T B J w with B the blockwise dual derivative.
        const FeatureEval e = map.forward_eval(x);
        const BlockVectors t = map.jvp_from(e, w);
        out.wrt_x = map.vjp_from(e, dual_jacobian_apply(e.g, t, eps));
        out.wrt_eps = dual_eps_derivative_dot(e.g, t, eps);
        return out;
    }

    const ConvNetParams& P = map.params();
    const int h = map.image_height(), wd = map.image_width();
    const FeatureEval e = map.forward_eval(x);

    // Tangent strand through the net: t_{l+1} = slope(a_l) .* conv(t_l, W_l).
    // b_l is kept because the slope's own derivative enters the reverse pass.
    std::vector<Tensor> t(5), b(4);
    t[0] = w;
    for (int l = 0; l < 4; ++l) {
        b[l] = conv2d(t[l], P.layers[l]);
        t[l + 1] = b[l];
        for (std::size_t i = 0; i < t[l + 1].size(); ++i)
            t[l + 1][i] *= smoothed_relu_d1(e.a[l][i], P.delta);
    }
    const BlockVectors t4 = [&] {
        BlockVectors bv(map.blocks(), map.dim());
        std::memcpy(bv.v.data(), t[4].data(), bv.v.size() * sizeof(double));
        return bv;
    }();

    // s = <t_4, y*(g, eps)> with g = h_4; seed both reverse strands.
    const BlockVectors ystar = dual_maximizer(e.g, eps);
    out.wrt_eps = dual_eps_derivative_dot(e.g, t4, eps);

    Tensor tbar = blocks_as_image_stack(ystar, h, wd);
    Tensor hbar = blocks_as_image_stack(dual_jacobian_apply(e.g, t4, eps), h, wd);

    for (int l = 3; l >= 0; --l) {
        Tensor bbar = tbar, abar = tbar;
        for (std::size_t i = 0; i < tbar.size(); ++i) {
            const double a = e.a[l][i];
            bbar[i] = smoothed_relu_d1(a, P.delta) * tbar[i];
            abar[i] = smoothed_relu_d2(a, P.delta) * b[l][i] * tbar[i] +
                      smoothed_relu_d1(a, P.delta) * hbar[i];
        }
        ConvKernel wg = conv2d_weight_grad(e.h[l], abar);
        const ConvKernel wg_t = conv2d_weight_grad(t[l], bbar);
        for (std::size_t i = 0; i < wg.w.size(); ++i) wg.w[i] += wg_t.w[i];
        out.wrt_layers[l] = std::move(wg);
        hbar = conv2d_transpose(abar, P.layers[l]);
        tbar = conv2d_transpose(bbar, P.layers[l]);
    }
    out.wrt_x = std::move(hbar);  // t_0 = w is constant, so its cotangent is dropped
    return out;
}

double clarke_residual(const FeatureMap& map, const Tensor& x, const Tensor& grad_f,
                       double zero_tol) {
    if (zero_tol < 0.0) throw std::invalid_argument("clarke_residual: zero_tol must be >= 0");
    const int n = map.image_height() * map.image_width();
    if (n > 256) throw std::invalid_argument("clarke_residual: supports images up to 256 pixels");
    check_same_shape(x, grad_f, "clarke_residual");

    const FeatureEval e = map.forward_eval(x);
    const int d = map.dim();

    // Fixed part: grad_f plus the large-block subgradients.
    BlockVectors ylarge(map.blocks(), d);
    std::vector<int> small;
    for (int i = 0; i < map.blocks(); ++i) {
        const double nn = e.g.block_norm(i);
        if (nn <= zero_tol) {
            small.push_back(i);
        } else {
            const double* gi = e.g.block(i);
            double* yi = ylarge.block(i);
            for (int j = 0; j < d; ++j) yi[j] = gi[j] / nn;
        }
    }
    const Tensor fixed_t = add_scaled(grad_f, 1.0, map.vjp_from(e, ylarge));
    Eigen::VectorXd q(n);
    for (int i = 0; i < n; ++i) q[i] = fixed_t.data()[i];
    if (small.empty()) return q.norm();

    // Materialize the small-block Jacobians row by row through the vjp.
    const int ns = static_cast<int>(small.size());
    std::vector<Eigen::MatrixXd> J(ns);      // d x n
    std::vector<Eigen::MatrixXd> basis(ns);  // d x rank, orthonormal columns of range(J_i)
    double lip = 0.0;
    for (int s = 0; s < ns; ++s) {
        J[s].resize(d, n);
        for (int j = 0; j < d; ++j) {
            BlockVectors unit(map.blocks(), d);
            unit.block(small[s])[j] = 1.0;
            const Tensor row = map.vjp_from(e, unit);
            for (int c = 0; c < n; ++c) J[s](j, c) = row.data()[c];
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(J[s], Eigen::ComputeThinU);
        const auto& sv = svd.singularValues();
        const double cutoff = sv.size() ? sv[0] * 1e-12 : 0.0;
        int rank = 0;
        while (rank < sv.size() && sv[rank] > cutoff && sv[rank] > 0.0) ++rank;
        basis[s] = svd.matrixU().leftCols(rank);
        lip += sv.size() ? sv[0] * sv[0] : 0.0;
    }

    // Projection onto {p in range(J_i): ||p|| <= 1}: restrict to the subspace,
    // then clip the norm (exact for a ball intersected with a subspace).
    auto project = [&](int s, Eigen::VectorXd p) {
        p = basis[s] * (basis[s].transpose() * p);
        const double nn = p.norm();
        if (nn > 1.0) p /= nn;
        return p;
    };

    // Start from the smoothed-dual surrogate w_i = g_i / zero_tol (clipped),
    // so the minimized residual never exceeds the matching smoothed gradient
    // norm; projected gradient descent only improves from there.
    std::vector<Eigen::VectorXd> p(ns);
    for (int s = 0; s < ns; ++s) {
        Eigen::VectorXd w0 = Eigen::VectorXd::Zero(d);
        if (zero_tol > 0.0) {
            const double* gi = e.g.block(small[s]);
            for (int j = 0; j < d; ++j) w0[j] = gi[j] / zero_tol;
        }
        p[s] = project(s, w0);
    }

    const double step = lip > 0.0 ? 1.0 / (2.0 * lip) : 0.0;
    if (step == 0.0) return q.norm();  // all small-block Jacobians vanish

    Eigen::VectorXd resid = q;
    for (int s = 0; s < ns; ++s) resid += J[s].transpose() * p[s];
    double best = resid.squaredNorm();
    for (int it = 0; it < 2000; ++it) {
        for (int s = 0; s < ns; ++s) {
            const Eigen::VectorXd grad = 2.0 * (J[s] * resid);
            const Eigen::VectorXd pn = project(s, p[s] - step * grad);
            resid += J[s].transpose() * (pn - p[s]);
            p[s] = pn;
        }
        const double cur = resid.squaredNorm();
        if (best - cur < 1e-16 * (1.0 + best)) break;
        best = cur;
    }
    return resid.norm();
}

}  // namespace lda
