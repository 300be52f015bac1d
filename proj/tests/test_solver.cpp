#include <doctest.h>

#include <cmath>
#include <cstdint>

#include "lda/errors.hpp"
#include "lda/feature_map.hpp"
#include "lda/fidelity.hpp"
#include "lda/rng.hpp"
#include "lda/solver.hpp"
#include "lda/synthesis.hpp"
#include "test_support.hpp"

using namespace lda;
namespace fs = std::filesystem;

static ConvNetParams zero_net(int width) {
    ConvNetParams p;
    p.width = width;
    p.delta = 0.01;
    p.layers[0] = ConvKernel(1, width);
    for (int l = 1; l < 4; ++l) p.layers[l] = ConvKernel(width, width);
    return p;
}

// TV denoising problem with a pinned noisy piecewise image.
struct TvInstance {
    IdentityOperator op;
    FeatureMap map;
    Measurement b;
    Tensor x0;
    Problem p;

    TvInstance(int h, int w, std::uint64_t seed)
        : op(h, w), map(FeatureMap::finite_difference(h, w)) {
        Rng rng(seed);
        auto imgs = make_images("piecewise", 1, h, w, rng);
        const auto noisy = add_noise(imgs[0], 0.1, rng);
        b = op.apply(noisy);
        x0 = noisy;
        p = Problem{&op, &b, &map};
    }
};

TEST_CASE("lda_step: zero feature response reduces to plain gradient descent") {
    const int h = 4, w = 4;
    IdentityOperator op(h, w);
    auto map = FeatureMap::conv_net(h, w, zero_net(3));
    Rng rng(81);
    const auto target = support::random_tensor(h, w, 1, rng, 0.0, 1.0);
    const auto b = op.apply(target);
    Problem p{&op, &b, &map};
    const auto x = support::random_tensor(h, w, 1, rng, 0.0, 1.0);
    const auto out = lda_step(p, x, 0.1, 1.0, 0.5);
    // alpha = 1 on f = 0.5||x-b||^2 jumps straight to b; grad r is zero.
    CHECK(support::max_abs_diff(out.x, target) <= 1e-14);
    CHECK(out.branch == 'u');  // u == v, tie goes to u
    CHECK(out.phi_u == doctest::Approx(out.phi_v));
}

TEST_CASE("lda_step: scalar Huber instance matches the hand-computed step") {
    IdentityOperator op(1, 1);
    auto map = FeatureMap::identity(1, 1);
    Tensor truth(1, 1);
    truth[0] = 0.4;
    const auto b = op.apply(truth);
    Problem p{&op, &b, &map};
    Tensor x(1, 1);
    x[0] = 1.2;
    const double eps = 0.5, alpha = 0.3, tau = 0.15;

    // Scripted scalar oracle, evaluated with the same double arithmetic.
    const double grad_f = x[0] - 0.4;
    const double z = x[0] - alpha * grad_f;
    auto huber_grad = [&](double t) { return std::abs(t) <= eps ? t / eps : (t > 0 ? 1.0 : -1.0); };
    auto huber_val = [&](double t) {
        return std::abs(t) <= eps ? t * t / (2 * eps) : std::abs(t) - eps / 2;
    };
    const double u = z - tau * huber_grad(z);
    const double v = z - alpha * huber_grad(x[0]);
    auto phi = [&](double t) { return 0.5 * (t - 0.4) * (t - 0.4) + huber_val(t); };
    const double expect = phi(u) <= phi(v) ? u : v;

    const auto out = lda_step(p, x, eps, alpha, tau);
    CHECK(out.x[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(out.phi_u == doctest::Approx(phi(u)).epsilon(1e-12));
    CHECK(out.phi_v == doctest::Approx(phi(v)).epsilon(1e-12));
}

TEST_CASE("lda_step: selection takes the smaller objective, ties to u") {
    TvInstance inst(6, 6, 82);
    Rng rng(83);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = support::random_tensor(6, 6, 1, rng, 0.0, 1.0);
        const auto out = lda_step(inst.p, x, 0.05, 0.2, 0.07);
        if (out.branch == 'u')
            CHECK(out.phi_u <= out.phi_v);
        else
            CHECK(out.phi_v < out.phi_u);
        CHECK(out.phi_next == std::min(out.phi_u, out.phi_v));
    }
}

TEST_CASE("reduction_fires: strict threshold") {
    CHECK(reduction_fires(0.01, 0.1, 1.0, 0.5));
    CHECK_FALSE(reduction_fires(0.06, 0.1, 1.0, 0.5));
    CHECK_FALSE(reduction_fires(0.05, 0.1, 1.0, 0.5));  // boundary: strict
}

TEST_CASE("solver config validation") {
    SolverConfig c;
    c.gamma = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = SolverConfig{};
    c.sigma = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = SolverConfig{};
    c.delta2 = 1.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = SolverConfig{};
    c.delta1 = 1.2;
    c.delta2 = 1.4;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    StepSchedule s;
    s.mode = StepMode::fixed_list;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s.alphas = {0.1, -0.1};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = StepSchedule{};
    s.mode = StepMode::line_search;
    s.ls_shrink = 1.0;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

TEST_CASE("solve: pure fit term converges like gradient descent") {
    const int h = 4, w = 4;
    IdentityOperator op(h, w);
    auto map = FeatureMap::conv_net(h, w, zero_net(3));
    Rng rng(84);
    const auto target = support::random_tensor(h, w, 1, rng, 0.0, 1.0);
    const auto b = op.apply(target);
    Problem p{&op, &b, &map};
    SolverConfig cfg;
    cfg.eps0 = 0.1;
    cfg.eps_tol = 0.0;  // never terminate early
    cfg.max_iters = 500;
    StepSchedule sched;  // theory mode
    const auto res = solve(p, support::random_tensor(h, w, 1, rng), cfg, sched);
    CHECK(norm(fidelity_gradient(op, res.x, b)) <= 1e-8);
    CHECK(res.budget.M == 0.0);
    CHECK(res.budget.L_g == 0.0);
}

TEST_CASE("solve: descent invariant and per-step v-descent in theory mode") {
    TvInstance inst(8, 8, 85);
    SolverConfig cfg;
    cfg.eps_tol = 0.0;
    cfg.max_iters = 150;
    StepSchedule sched;
    const auto res = solve(inst.p, inst.x0, cfg, sched);
    REQUIRE(res.trace.rows.size() == 150);
    const int m = inst.map.blocks();
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& row : res.trace.rows) {
        const double lyap = row.phi + 0.5 * m * row.eps;
        CHECK(lyap <= prev + 1e-10 * std::abs(prev));
        prev = lyap;
        // phi_eps(x_{k+1}) = min(phi_u, phi_v) <= phi_v <= phi_eps(x_k)
        CHECK(std::min(row.phi_u, row.phi_v) <= row.phi_v);
        CHECK(row.phi_v <= row.phi + 1e-12 * std::abs(row.phi));
    }
}

TEST_CASE("solve: eps ladder and reduction flags are exact") {
    TvInstance inst(6, 6, 86);
    SolverConfig cfg;
    cfg.eps0 = 0.2;
    cfg.gamma = 0.5;
    cfg.sigma = 1.0;
    cfg.eps_tol = 0.0;
    cfg.max_iters = 400;
    StepSchedule sched;
    const auto res = solve(inst.p, inst.x0, cfg, sched);
    double ladder = 0.2;
    int reductions = 0;
    for (const auto& row : res.trace.rows) {
        CHECK(row.eps == ladder);  // bitwise: the solver multiplies sequentially
        CHECK(row.reduced == reduction_fires(row.grad_norm, row.eps, cfg.sigma, cfg.gamma));
        if (row.reduced) {
            ladder *= cfg.gamma;
            ++reductions;
        }
    }
    CHECK(res.reductions == reductions);
    CHECK(reductions > 0);
    CHECK(res.eps_final == ladder);
}

TEST_CASE("solve: termination chain satisfies the stopping rule") {
    TvInstance inst(6, 6, 87);
    SolverConfig cfg;
    cfg.eps_tol = 2e-2;
    cfg.max_iters = 5000;
    StepSchedule sched;
    const auto res = solve(inst.p, inst.x0, cfg, sched);
    REQUIRE(res.terminated);
    const auto& last = res.trace.rows.back();
    CHECK(last.reduced);
    CHECK(last.grad_norm < cfg.sigma * cfg.gamma * last.eps);
    CHECK(res.eps_final == last.eps * cfg.gamma);
    CHECK(cfg.sigma * res.eps_final < cfg.eps_tol);
    // Every earlier row failed the stopping rule.
    for (std::size_t i = 0; i + 1 < res.trace.rows.size(); ++i) {
        const auto& r = res.trace.rows[i];
        const double eps_after = r.reduced ? r.eps * cfg.gamma : r.eps;
        CHECK(cfg.sigma * eps_after >= cfg.eps_tol);
    }
}

TEST_CASE("solve: data-scaled default eps0") {
    const int h = 3, w = 3;
    IdentityOperator op(h, w);
    auto map = FeatureMap::identity(h, w);
    Tensor img(h, w);
    img.fill(0.1);
    img(1, 1) = 0.8;  // max |pixel| = max block norm
    const auto b = op.apply(img);
    Problem p{&op, &b, &map};
    SolverConfig cfg;  // eps0 = -1: auto
    cfg.max_iters = 3;
    cfg.eps_tol = 0.0;
    StepSchedule sched;
    const auto res = solve(p, img, cfg, sched);
    CHECK(res.eps0 == doctest::Approx(0.08).epsilon(1e-15));
    CHECK(res.trace.rows[0].eps == res.eps0);
}

TEST_CASE("solve: bitwise deterministic") {
    TvInstance inst(7, 7, 88);
    SolverConfig cfg;
    cfg.max_iters = 60;
    cfg.eps_tol = 0.0;
    StepSchedule sched;
    const auto a = solve(inst.p, inst.x0, cfg, sched);
    const auto b2 = solve(inst.p, inst.x0, cfg, sched);
    REQUIRE(a.trace.rows.size() == b2.trace.rows.size());
    for (std::size_t i = 0; i < a.trace.rows.size(); ++i) {
        CHECK(a.trace.rows[i].phi == b2.trace.rows[i].phi);
        CHECK(a.trace.rows[i].grad_norm == b2.trace.rows[i].grad_norm);
        CHECK(a.trace.rows[i].alpha == b2.trace.rows[i].alpha);
    }
    CHECK(support::max_abs_diff(a.x, b2.x) == 0.0);
}

TEST_CASE("solve: fixed-eps gradient vanishing rate") {
    TvInstance inst(6, 6, 89);
    SolverConfig cfg;
    cfg.eps0 = 0.1;
    cfg.sigma = 1e-30;  // reduction criterion never fires: fixed-eps regime
    cfg.eps_tol = 0.0;
    cfg.max_iters = 300;
    StepSchedule sched;
    const auto res = solve(inst.p, inst.x0, cfg, sched);
    const int m = inst.map.blocks();
    const double L = res.budget.total(m, cfg.eps0);
    const double phi0 = inst.p.objective(inst.x0, cfg.eps0);
    double run_min = std::numeric_limits<double>::infinity();
    for (int T = 1; T <= static_cast<int>(res.trace.rows.size()); ++T) {
        run_min = std::min(run_min, res.trace.rows[static_cast<std::size_t>(T - 1)].grad_norm);
        const double bound = std::sqrt(cfg.delta1 * cfg.delta2 * L *
                                       (2 * phi0 + m * cfg.eps0) / ((cfg.delta2 - 1.0) * T));
        CHECK(run_min <= bound * (1.0 + 1e-12));
    }
}

TEST_CASE("gd baseline: v branch only, never below LDA per step") {
    TvInstance inst(6, 6, 90);
    SolverConfig cfg;
    cfg.eps_tol = 0.0;
    cfg.max_iters = 80;
    StepSchedule sched;
    const auto gd = gd_descent(inst.p, inst.x0, 80, cfg, sched);
    for (const auto& row : gd.trace.rows) CHECK(row.branch == 'v');

    // From any gd iterate, one LDA step is at least as good as the v step.
    const auto lda = solve(inst.p, inst.x0, cfg, sched);
    REQUIRE(lda.trace.rows.size() == gd.trace.rows.size());
    const int m = inst.map.blocks();
    const auto& lr = lda.trace.rows.back();
    const auto& gr = gd.trace.rows.back();
    CHECK(lr.phi + 0.5 * m * lr.eps <= gr.phi + 0.5 * m * gr.eps + 1e-9);
}

TEST_CASE("agd baseline: theta 0 equals gd, momentum wins on an ill-conditioned quadratic") {
    // Diagonal operator with singular values from 1 down to 0.1: kappa = 100
    // for the normal matrix.
    const int h = 4, w = 4, n = 16;
    std::vector<double> diag(static_cast<std::size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i)
        diag[static_cast<std::size_t>(i) * n + i] = 1.0 - 0.9 * i / (n - 1.0);
    DenseOperator op(h, w, n, std::move(diag));
    auto map = FeatureMap::conv_net(h, w, zero_net(3));
    Rng rng(91);
    const auto target = support::random_tensor(h, w, 1, rng, 0.0, 1.0);
    const auto b = op.apply(target);
    Problem p{&op, &b, &map};
    const auto x0 = support::random_tensor(h, w, 1, rng, 0.0, 1.0);

    SolverConfig cfg;
    cfg.eps0 = 0.1;
    cfg.eps_tol = 0.0;
    cfg.max_iters = 4000;
    StepSchedule sched;

    const auto gd = gd_descent(p, x0, 4000, cfg, sched);
    const auto agd0 = agd_descent(p, x0, 4000, {0.0}, true, cfg, sched);
    REQUIRE(agd0.trace.rows.size() == gd.trace.rows.size());
    CHECK(support::max_abs_diff(agd0.x, gd.x) == 0.0);

    const double kappa = 100.0;
    const double theta = std::pow((std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0), 2.0);
    const auto agd = agd_descent(p, x0, 4000, {theta}, false, cfg, sched);
    auto first_below = [](const Trace& t, double tol) {
        for (std::size_t i = 0; i < t.rows.size(); ++i)
            if (t.rows[i].grad_norm <= tol) return static_cast<int>(i);
        return static_cast<int>(t.rows.size());
    };
    const int it_gd = first_below(gd.trace, 1e-6);
    const int it_agd = first_below(agd.trace, 1e-6);
    CHECK(it_agd < it_gd);
    for (const auto& row : agd.trace.rows) CHECK(row.branch == 'a');
}

TEST_CASE("agd baseline: first step with history x_{-1} = x_0 equals the plain step") {
    TvInstance inst(5, 5, 92);
    SolverConfig cfg;
    cfg.eps_tol = 0.0;
    cfg.max_iters = 1;
    StepSchedule sched;
    const auto plain = gd_descent(inst.p, inst.x0, 1, cfg, sched);
    const auto inert = agd_descent(inst.p, inst.x0, 1, {0.7}, true, cfg, sched);
    CHECK(support::max_abs_diff(plain.x, inert.x) == 0.0);
}

TEST_CASE("agd baseline: rejects line-search schedules") {
    TvInstance inst(4, 4, 93);
    SolverConfig cfg;
    StepSchedule sched;
    sched.mode = StepMode::line_search;
    CHECK_THROWS_AS(agd_descent(inst.p, inst.x0, 5, {0.5}, true, cfg, sched),
                    std::invalid_argument);
}

TEST_CASE("line search: descent holds, pathological acceptance fails loudly") {
    TvInstance inst(6, 6, 94);
    SolverConfig cfg;
    cfg.eps_tol = 0.0;
    cfg.max_iters = 40;
    StepSchedule sched;
    sched.mode = StepMode::line_search;
    const auto res = solve(inst.p, inst.x0, cfg, sched);
    const int m = inst.map.blocks();
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& row : res.trace.rows) {
        const double lyap = row.phi + 0.5 * m * row.eps;
        CHECK(lyap <= prev + 1e-10 * std::abs(prev));
        prev = lyap;
    }
    // A huge sufficient-decrease constant cannot fail the search outright: the
    // quadratic penalty shrinks faster than the linear descent, so the search
    // accepts once the step is ~1/ls_descent.  It must stay tiny and keep the
    // descent property.
    StepSchedule greedy = sched;
    greedy.ls_descent = 1e12;
    SolverConfig short_cfg = cfg;
    short_cfg.max_iters = 5;
    const auto crawl = solve(inst.p, inst.x0, short_cfg, greedy);
    for (const auto& row : crawl.trace.rows) CHECK(row.alpha <= 1e-11);
    CHECK(crawl.trace.rows.back().phi <= crawl.trace.rows.front().phi);

    // A non-finite start is a genuine numerical failure.
    Tensor poisoned = inst.x0;
    poisoned[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(solve(inst.p, poisoned, cfg, sched), NumericalFailure);
}

TEST_CASE("fixed_list schedule: entries are consumed in order, last repeats") {
    TvInstance inst(5, 5, 95);
    SolverConfig cfg;
    cfg.eps_tol = 0.0;
    cfg.max_iters = 5;
    StepSchedule sched;
    sched.mode = StepMode::fixed_list;
    sched.alphas = {0.3, 0.2, 0.1};
    sched.taus = {0.15, 0.1, 0.05};
    const auto res = solve(inst.p, inst.x0, cfg, sched);
    REQUIRE(res.trace.rows.size() == 5);
    CHECK(res.trace.rows[0].alpha == 0.3);
    CHECK(res.trace.rows[1].alpha == 0.2);
    CHECK(res.trace.rows[2].alpha == 0.1);
    CHECK(res.trace.rows[3].alpha == 0.1);
    CHECK(res.trace.rows[4].alpha == 0.1);
    CHECK(res.trace.rows[4].tau == 0.05);
}

TEST_CASE("trace csv: pinned header and bit-exact round trip") {
    Trace t;
    TraceRow r{};
    r.k = 0;
    r.eps = 1.0 / 3.0;
    r.phi = 0.1 + 1e-17;
    r.grad_norm = 5e-324;
    r.branch = 'u';
    r.reduced = true;
    r.alpha = 0.7;
    r.tau = 0.35;
    t.rows.push_back(r);
    r.k = 1;
    r.branch = 'v';
    r.reduced = false;
    r.eps = 1e300;
    t.rows.push_back(r);

    const std::string csv = render_trace_csv(t);
    CHECK(csv.rfind("k,eps,phi_eps,grad_norm,branch,reduced,alpha,tau\n", 0) == 0);

    const auto dir = fs::temp_directory_path() / "lda_test_solver";
    fs::create_directories(dir);
    write_trace_csv(dir / "t.csv", t);
    const auto back = read_trace_csv(dir / "t.csv");
    REQUIRE(back.rows.size() == 2);
    CHECK(back.rows[0].eps == t.rows[0].eps);
    CHECK(back.rows[0].phi == t.rows[0].phi);
    CHECK(back.rows[0].grad_norm == t.rows[0].grad_norm);
    CHECK(back.rows[0].branch == 'u');
    CHECK(back.rows[0].reduced == true);
    CHECK(back.rows[1].eps == t.rows[1].eps);
    CHECK(back.rows[1].reduced == false);
}

TEST_CASE("budget: composite Lipschitz formula and TV constants") {
    TvInstance inst(8, 8, 96);
    const auto budget = make_budget(inst.p);
    CHECK(budget.L_f == doctest::Approx(1.0));
    CHECK(budget.L_g == 0.0);
    CHECK(budget.M <= std::sqrt(8.0) + 1e-9);
    CHECK(budget.M >= std::sqrt(8.0) * 0.9);
    const double eps = 0.05;
    CHECK(budget.total(64, eps) ==
          doctest::Approx(budget.L_f + 8.0 * budget.L_g + budget.M * budget.M / eps));
}

TEST_CASE("iteration bounds: hand-computed fixed points") {
    // delta1 = delta2 = 2, L = 10, phi0 = 1, phi* = 0, m = 4, eps = 0.1,
    // eta = 0.5: 2*2*10*(2 + 0.4) / (1 * 0.25) = 384.
    CHECK(fixed_eps_first_hit_bound(2.0, 2.0, 10.0, 1.0, 0.0, 4, 0.1, 0.5) ==
          doctest::Approx(384.0));

    LipschitzBudget budget;
    budget.L_f = 1.0;
    budget.L_g = 0.0;
    budget.M = 2.0;
    // gamma = 0.5, sigma = 1, eps0 = 0.2, phi0 = 3, phi* = 0, m = 9,
    // delta1 = delta2 = 1.5: gap = 6 + 1.8 = 7.8, smooth = 1.
    // c1 = 1.5*1.5*1*7.8 / (0.5 * 0.04 * 0.25)           = 3510
    // c2 = 1.5*1.5*4*7.8 / (0.5 * 0.008 * 0.125)         = 140400
    const auto c = theorem_constants(budget, 9, 3.0, 0.0, 0.2, 0.5, 1.0, 1.5, 1.5);
    CHECK(c.c1 == doctest::Approx(3510.0).epsilon(1e-12));
    CHECK(c.c2 == doctest::Approx(140400.0).epsilon(1e-12));

    // Total bound at eps_tol = sigma*eps0*gamma^3 (three reductions):
    // term1 = c1*0.04/0.75 / (0.025^2), term2 = c2*0.008/0.875 / (0.025^3),
    // corr = (c1*0.25 + c2*0.125 - (c1+c2)*0.03125) / (0.75*0.875).
    const double t1 = c.c1 * 0.04 / 0.75 / (0.025 * 0.025);
    const double t2 = c.c2 * 0.008 / 0.875 / (0.025 * 0.025 * 0.025);
    const double corr =
        (c.c1 * 0.25 + c.c2 * 0.125 - (c.c1 + c.c2) * 0.03125) / (0.75 * 0.875);
    CHECK(total_iteration_bound(c, 0.5, 1.0, 0.2, 0.025) == doctest::Approx(t1 + t2 - corr));
}

TEST_CASE("problem validation and non-finite guard") {
    Problem p;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);

    TvInstance inst(4, 4, 97);
    SolverConfig cfg;
    cfg.max_iters = 10;
    cfg.eps_tol = 0.0;
    StepSchedule sched;
    sched.mode = StepMode::fixed_list;
    sched.alphas = {1e200};  // guaranteed overflow on a quadratic
    sched.taus = {1e200};
    CHECK_THROWS_AS(solve(inst.p, inst.x0, cfg, sched), NumericalFailure);
}
