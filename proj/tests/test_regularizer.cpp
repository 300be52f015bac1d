#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "lda/feature_map.hpp"
#include "lda/regularizer.hpp"
#include "lda/rng.hpp"
#include "test_support.hpp"

using namespace lda;

static BlockVectors make_blocks(std::initializer_list<std::initializer_list<double>> rows) {
    const int m = static_cast<int>(rows.size());
    const int d = static_cast<int>(rows.begin()->size());
    BlockVectors g(m, d);
    int i = 0;
    for (const auto& r : rows) {
        int j = 0;
        for (double v : r) g.block(i)[j++] = v;
        ++i;
    }
    return g;
}

TEST_CASE("l21_norm: sums Euclidean block norms") {
    CHECK(l21_norm(make_blocks({{3.0, 4.0}})) == doctest::Approx(5.0));
    CHECK(l21_norm(make_blocks({{0.0, 0.0}})) == 0.0);
    CHECK(l21_norm(make_blocks({{1.0, 0.0}, {0.0, 1.0}})) == doctest::Approx(2.0));
}

TEST_CASE("dual_maximizer: the two closed-form branches") {
    const auto big = dual_maximizer(make_blocks({{3.0, 4.0}}), 1.0);
    CHECK(big.block(0)[0] == doctest::Approx(0.6));
    CHECK(big.block(0)[1] == doctest::Approx(0.8));
    const auto small = dual_maximizer(make_blocks({{0.3, 0.4}}), 1.0);
    CHECK(small.block(0)[0] == doctest::Approx(0.3));
    CHECK(small.block(0)[1] == doctest::Approx(0.4));
}

TEST_CASE("dual_maximizer: always feasible") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const int m = 1 + static_cast<int>(rng.next_below(6));
        const int d = 1 + static_cast<int>(rng.next_below(4));
        BlockVectors g(m, d);
        for (auto& v : g.v) v = rng.uniform(-2.0, 2.0);
        const double eps = rng.uniform(1e-3, 2.0);
        const auto y = dual_maximizer(g, eps);
        for (int i = 0; i < m; ++i) CHECK(y.block_norm(i) <= 1.0 + 1e-12);
    }
}

// Projected gradient ascent on <g,y> - eps/2 ||y||^2 over the product of unit
// balls, from zero, with a deliberately small step so the oracle does not just
// replay the closed form.
static BlockVectors pga_dual_oracle(const BlockVectors& g, double eps, int steps) {
    BlockVectors y(g.blocks, g.dim);
    const double step = 0.1 / (eps + 1.0);
    for (int it = 0; it < steps; ++it) {
        for (std::size_t j = 0; j < y.v.size(); ++j) y.v[j] += step * (g.v[j] - eps * y.v[j]);
        for (int i = 0; i < y.blocks; ++i) {
            const double n = y.block_norm(i);
            if (n > 1.0)
                for (int j = 0; j < y.dim; ++j) y.block(i)[j] /= n;
        }
    }
    return y;
}

TEST_CASE("dual_maximizer: matches the projected-gradient-ascent oracle") {
    Rng rng(42);
    for (int trial = 0; trial < 10; ++trial) {
        const int m = 1 + static_cast<int>(rng.next_below(5));
        const int d = 1 + static_cast<int>(rng.next_below(3));
        BlockVectors g(m, d);
        for (auto& v : g.v) v = rng.uniform(-2.0, 2.0);
        const double eps = rng.uniform(0.05, 1.5);
        const auto closed = dual_maximizer(g, eps);
        const auto iter = pga_dual_oracle(g, eps, 10000);
        for (std::size_t j = 0; j < closed.v.size(); ++j)
            CHECK(std::abs(closed.v[j] - iter.v[j]) <= 1e-6);
    }
}

TEST_CASE("smoothed_l21: fixed points and boundary continuity") {
    CHECK(smoothed_l21(make_blocks({{3.0, 4.0}}), 1.0) == doctest::Approx(4.5));
    CHECK(smoothed_l21(make_blocks({{0.3, 0.4}}), 1.0) == doctest::Approx(0.125));
    // ||g_i|| = eps: both branches give eps/2.
    const double eps = 0.37;
    CHECK(smoothed_l21(make_blocks({{eps, 0.0}}), eps) == doctest::Approx(eps / 2.0));
}

TEST_CASE("smoothed_l21: agrees with the dual objective value") {
    Rng rng(43);
    for (int trial = 0; trial < 300; ++trial) {
        const int m = 1 + static_cast<int>(rng.next_below(8));
        const int d = 1 + static_cast<int>(rng.next_below(4));
        BlockVectors g(m, d);
        for (auto& v : g.v) v = rng.uniform(-2.0, 2.0);
        const double eps = rng.uniform(1e-3, 3.0);
        const auto y = dual_maximizer(g, eps);
        double yn2 = 0.0;
        for (double v : y.v) yn2 += v * v;
        const double via_dual = dot(g, y) - 0.5 * eps * yn2;
        CHECK(std::abs(smoothed_l21(g, eps) - via_dual) <= 1e-12 * (1.0 + std::abs(via_dual)));
    }
}

TEST_CASE("sandwich_slack: nonnegative, with the exact corner cases") {
    Rng rng(44);
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = 1 + static_cast<int>(rng.next_below(8));
        const int d = 1 + static_cast<int>(rng.next_below(4));
        BlockVectors g(m, d);
        for (auto& v : g.v) v = rng.uniform(-2.0, 2.0);
        const double eps = rng.uniform(1e-4, 3.0);
        const auto s = sandwich_slack(g, eps);
        const double scale = 1.0 + l21_norm(g);
        CHECK(s.lower >= -1e-12 * scale);
        CHECK(s.upper >= -1e-12 * scale);
    }
    // g = 0: slack exactly (0, m*eps/2).
    BlockVectors z(3, 2);
    const auto s0 = sandwich_slack(z, 0.4);
    CHECK(s0.lower == 0.0);
    CHECK(s0.upper == doctest::Approx(3 * 0.4 / 2.0));
    // Every block far outside: lower slack m*eps/2, upper slack 0.
    const auto g = make_blocks({{30.0, 0.0}, {0.0, 40.0}});
    const auto s1 = sandwich_slack(g, 0.1);
    CHECK(s1.lower == doctest::Approx(2 * 0.1 / 2.0));
    CHECK(s1.upper == doctest::Approx(0.0));
}

TEST_CASE("partition_blocks: boundary goes to the small side") {
    const auto g = make_blocks({{0.5, 0.0}, {2.0, 0.0}, {1.0, 0.0}});
    const auto part = partition_blocks(g, 1.0);
    REQUIRE(part.small.size() == 2);
    REQUIRE(part.large.size() == 1);
    CHECK(part.small[0] == 0);
    CHECK(part.small[1] == 2);
    CHECK(part.large[0] == 1);
}

TEST_CASE("per-block eps monotonicity of the smoothed value plus eps/2") {
    Rng rng(45);
    for (int trial = 0; trial < 10000; ++trial) {
        const double s = rng.uniform(0.0, 3.0);
        double e1 = rng.uniform(1e-4, 2.0), e2 = rng.uniform(1e-4, 2.0);
        if (e1 > e2) std::swap(e1, e2);  // e1 <= e2
        BlockVectors g(1, 1);
        g.v[0] = s;
        const double lo = smoothed_l21(g, e1) + e1 / 2.0;
        const double hi = smoothed_l21(g, e2) + e2 / 2.0;
        CHECK(lo <= hi + 1e-12);
    }
}

TEST_CASE("smoothed_l21_gradient: identity map gives the Huber derivative") {
    auto map = FeatureMap::identity(1, 1);
    Tensor x(1, 1);
    x[0] = 2.0;
    CHECK(smoothed_l21_gradient(map, x, 1.0)[0] == doctest::Approx(1.0));
    x[0] = 0.5;
    CHECK(smoothed_l21_gradient(map, x, 1.0)[0] == doctest::Approx(0.5));
}

TEST_CASE("smoothed_l21_gradient: central differences, TV and conv net") {
    Rng rng(46);
    auto check_map = [&](const FeatureMap& map) {
        const auto x = support::random_tensor(8, 8, 1, rng);
        const double eps = 0.1;
        const auto grad = smoothed_l21_gradient(map, x, eps);
        auto f = [&](const Tensor& p) { return smoothed_l21(map.forward(p), eps); };
        Tensor fd(8, 8);
        const double h = 1e-5;
        for (std::size_t i = 0; i < fd.size(); ++i) {
            Tensor d(8, 8);
            d[i] = 1.0;
            fd[i] = support::central_diff(f, x, d, h);
        }
        CHECK(support::rel_l2_diff(grad, fd) <= 1e-5);
    };
    check_map(FeatureMap::finite_difference(8, 8));
    auto p = ConvNetParams::xavier(4, rng);
    check_map(FeatureMap::conv_net(8, 8, p));
}

TEST_CASE("smoothed gradient obeys the composite Lipschitz budget") {
    Rng rng(47);
    auto p = ConvNetParams::xavier(4, rng);
    auto map = FeatureMap::conv_net(6, 6, p);
    Rng brng(48);
    const double M = map.jacobian_norm_bound(brng);
    const double Lg = map.jacobian_lipschitz_bound();
    const double eps = 0.2;
    const double budget = std::sqrt(static_cast<double>(map.blocks())) * Lg + M * M / eps;
    for (int pair = 0; pair < 100; ++pair) {
        const auto x1 = support::random_tensor(6, 6, 1, rng);
        const auto x2 = support::random_tensor(6, 6, 1, rng);
        const auto g1 = smoothed_l21_gradient(map, x1, eps);
        const auto g2 = smoothed_l21_gradient(map, x2, eps);
        Tensor gd = g1, xd = x1;
        axpy(-1.0, g2, gd);
        axpy(-1.0, x2, xd);
        CHECK(norm(gd) <= budget * norm(xd) * (1.0 + 1e-9) + 1e-12);
    }
}

TEST_CASE("gradient pullback: all three derivative slots match finite differences") {
    Rng rng(49);
    auto p = ConvNetParams::xavier(4, rng);
    auto map = FeatureMap::conv_net(6, 6, p);
    const auto x = support::random_tensor(6, 6, 1, rng);
    const auto w = support::random_tensor(6, 6, 1, rng);
    const double eps = 0.15;
    const auto pb = smoothed_l21_gradient_pullback(map, x, w, eps);

    auto s_of_x = [&](const Tensor& q) { return dot(w, smoothed_l21_gradient(map, q, eps)); };

    // d/dx along random directions.
    for (int k = 0; k < 4; ++k) {
        const auto d = support::random_tensor(6, 6, 1, rng);
        const double fd = support::central_diff(s_of_x, x, d, 1e-6);
        CHECK(dot(pb.wrt_x, d) == doctest::Approx(fd).epsilon(1e-4));
    }

    // d/deps.
    {
        const double h = 1e-7;
        const double fp = dot(w, smoothed_l21_gradient(map, x, eps + h));
        const double fm = dot(w, smoothed_l21_gradient(map, x, eps - h));
        CHECK(pb.wrt_eps == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4));
    }

    // d/dW along a random kernel direction, one layer at a time.
    for (int l = 0; l < 4; ++l) {
        auto& base = p.layers[static_cast<std::size_t>(l)];
        ConvKernel dir(base.in_channels, base.out_channels);
        for (auto& v : dir.w) v = rng.uniform(-1.0, 1.0);
        const double h = 1e-6;
        auto eval_at = [&](double shift) {
            ConvNetParams q = p;
            for (std::size_t i = 0; i < dir.w.size(); ++i)
                q.layers[static_cast<std::size_t>(l)].w[i] += shift * dir.w[i];
            auto m2 = FeatureMap::conv_net(6, 6, q);
            return dot(w, smoothed_l21_gradient(m2, x, eps));
        };
        const double fd = (eval_at(h) - eval_at(-h)) / (2 * h);
        double an = 0.0;
        const auto& gl = pb.wrt_layers[static_cast<std::size_t>(l)];
        REQUIRE(gl.w.size() == dir.w.size());
        for (std::size_t i = 0; i < dir.w.size(); ++i) an += gl.w[i] * dir.w[i];
        CHECK(an == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("clarke_residual: smooth case with vanishing gradient is zero") {
    // Identity map, every |x_i| above the tolerance: phi's gradient is
    // grad_f + sign(x); choose grad_f = -sign(x).
    auto map = FeatureMap::identity(2, 2);
    Tensor x(2, 2);
    x[0] = 1.0; x[1] = -2.0; x[2] = 0.5; x[3] = -0.25;
    Tensor gf(2, 2);
    for (std::size_t i = 0; i < x.size(); ++i) gf[i] = x[i] > 0 ? -1.0 : 1.0;
    CHECK(clarke_residual(map, x, gf, 1e-8) <= 1e-8);
}

TEST_CASE("clarke_residual: l1 subdifferential absorbs small gradients at zero") {
    auto map = FeatureMap::identity(2, 2);
    Tensor x(2, 2);
    Rng rng(50);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor gf(2, 2);
        for (std::size_t i = 0; i < gf.size(); ++i) gf[i] = rng.uniform(-1.0, 1.0);
        CHECK(clarke_residual(map, x, gf, 1e-8) <= 1e-6);
    }
}

// Independent projected-gradient QP oracle on materialized Jacobians.
static double clarke_qp_oracle(const FeatureMap& map, const Tensor& x, const Tensor& grad_f,
                               double zero_tol, int steps) {
    const int n = map.image_height() * map.image_width();
    const int d = map.dim();
    const auto g = map.forward(x);

    // Materialize every block Jacobian row by row from basis-vector forwards
    // (linear maps only; good enough for the TV oracle).
    std::vector<Eigen::MatrixXd> J(static_cast<std::size_t>(map.blocks()),
                                   Eigen::MatrixXd::Zero(d, n));
    for (int j = 0; j < n; ++j) {
        Tensor e(map.image_height(), map.image_width());
        e[static_cast<std::size_t>(j)] = 1.0;
        const auto col = map.forward(e);
        for (int i = 0; i < map.blocks(); ++i)
            for (int r = 0; r < d; ++r) J[static_cast<std::size_t>(i)](r, j) = col.block(i)[r];
    }

    Eigen::VectorXd q(n);
    for (int j = 0; j < n; ++j) q(j) = grad_f[static_cast<std::size_t>(j)];
    std::vector<int> small;
    for (int i = 0; i < map.blocks(); ++i) {
        if (g.block_norm(i) <= zero_tol) {
            small.push_back(i);
        } else {
            Eigen::VectorXd gi(d);
            for (int r = 0; r < d; ++r) gi(r) = g.block(i)[r];
            q += J[static_cast<std::size_t>(i)].transpose() * gi / gi.norm();
        }
    }
    if (small.empty()) return q.norm();

    const int k = static_cast<int>(small.size());
    Eigen::MatrixXd G(n, k * d);
    for (int s = 0; s < k; ++s)
        G.block(0, s * d, n, d) = J[static_cast<std::size_t>(small[static_cast<std::size_t>(s)])].transpose();
    std::vector<Eigen::MatrixXd> basis;
    for (int s = 0; s < k; ++s) {
        const auto& Ji = J[static_cast<std::size_t>(small[static_cast<std::size_t>(s)])];
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ji, Eigen::ComputeThinU);
        const auto& sv = svd.singularValues();
        int rank = 0;
        for (int r = 0; r < sv.size(); ++r)
            if (sv(r) > 1e-12 * sv(0)) ++rank;
        basis.push_back(svd.matrixU().leftCols(rank));
    }

    Eigen::VectorXd pvec = Eigen::VectorXd::Zero(k * d);
    const double L = 2.0 * G.squaredNorm() + 1e-12;
    const double step = 1.0 / L;
    for (int it = 0; it < steps; ++it) {
        Eigen::VectorXd resid = q + G * pvec;
        Eigen::VectorXd grad = 2.0 * G.transpose() * resid;
        pvec -= step * grad;
        for (int s = 0; s < k; ++s) {
            Eigen::VectorXd pi = pvec.segment(s * d, d);
            pi = basis[static_cast<std::size_t>(s)] *
                 (basis[static_cast<std::size_t>(s)].transpose() * pi);
            const double nn = pi.norm();
            if (nn > 1.0) pi /= nn;
            pvec.segment(s * d, d) = pi;
        }
    }
    return (q + G * pvec).norm();
}

TEST_CASE("clarke_residual: matches the dense QP oracle on 4x4 TV instances") {
    Rng rng(51);
    auto map = FeatureMap::finite_difference(4, 4);
    for (int trial = 0; trial < 5; ++trial) {
        // Piecewise-flat iterate: some TV blocks vanish, some do not.
        Tensor x(4, 4);
        for (int y = 0; y < 4; ++y)
            for (int c = 0; c < 4; ++c) x(y, c) = (c < 2) ? 0.3 : rng.uniform(0.5, 1.0);
        const auto gf = support::random_tensor(4, 4, 1, rng, -0.3, 0.3);
        const double got = clarke_residual(map, x, gf, 1e-8);
        const double want = clarke_qp_oracle(map, x, gf, 1e-8, 100000);
        CHECK(got == doctest::Approx(want).epsilon(1e-4));
    }
}

TEST_CASE("clarke_residual: never exceeds the smoothed gradient norm at eps = zero_tol") {
    Rng rng(52);
    auto map = FeatureMap::finite_difference(5, 5);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = support::random_tensor(5, 5, 1, rng, 0.0, 1.0);
        const auto gf = support::random_tensor(5, 5, 1, rng, -0.5, 0.5);
        const double tol = 0.05;
        auto smooth_grad = smoothed_l21_gradient(map, x, tol);
        axpy(1.0, gf, smooth_grad);
        CHECK(clarke_residual(map, x, gf, tol) <= norm(smooth_grad) + 1e-10);
    }
}

TEST_CASE("clarke_residual: rejects oversized images") {
    auto map = FeatureMap::finite_difference(17, 17);
    Tensor x(17, 17), gf(17, 17);
    CHECK_THROWS(clarke_residual(map, x, gf, 1e-8));
}
