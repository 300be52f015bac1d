#include "lda/solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "lda/errors.hpp"

namespace lda {

void Problem::validate() const {
    if (!op || !data || !map) throw std::invalid_argument("Problem: missing component");
    if (op->image_height() != map->image_height() || op->image_width() != map->image_width())
        throw std::invalid_argument("Problem: operator and feature map disagree on image shape");
    if (static_cast<int>(data->size()) != op->measurement_size())
        throw std::invalid_argument("Problem: measurement size mismatch");
}

double Problem::objective(const Tensor& x, double eps) const {
    return fidelity_value(*op, x, *data) + smoothed_l21(map->forward(x), eps);
}

Tensor Problem::gradient(const Tensor& x, double eps) const {
    Tensor g = fidelity_gradient(*op, x, *data);
    axpy(1.0, smoothed_l21_gradient(*map, x, eps), g);
    return g;
}

void SolverConfig::validate() const {
    if (!(gamma > 0.0) || !(gamma < 1.0))
        throw std::invalid_argument("SolverConfig: gamma must lie in (0,1)");
    if (!(sigma > 0.0)) throw std::invalid_argument("SolverConfig: sigma must be positive");
    if (eps_tol < 0.0) throw std::invalid_argument("SolverConfig: eps_tol must be >= 0");
    if (max_iters < 1) throw std::invalid_argument("SolverConfig: max_iters must be >= 1");
    if (!(delta2 > 1.0) || !(delta1 >= delta2))
        throw std::invalid_argument("SolverConfig: need delta1 >= delta2 > 1");
}

void StepSchedule::validate() const {
    if (mode == StepMode::fixed_list) {
        if (alphas.empty()) throw std::invalid_argument("StepSchedule: fixed_list needs alphas");
        for (double a : alphas)
            if (!(a > 0.0)) throw std::invalid_argument("StepSchedule: alphas must be positive");
        for (double t : taus)
            if (!(t > 0.0)) throw std::invalid_argument("StepSchedule: taus must be positive");
    } else if (mode == StepMode::line_search) {
        if (!(ls_descent > 0.0) || !(ls_shrink > 0.0) || !(ls_shrink < 1.0) || !(ls_alpha0 > 0.0))
            throw std::invalid_argument("StepSchedule: bad line search parameters");
        for (double t : taus)
            if (!(t > 0.0)) throw std::invalid_argument("StepSchedule: taus must be positive");
    }
}

double LipschitzBudget::total(int blocks, double eps) const {
    return L_f + std::sqrt(static_cast<double>(blocks)) * L_g + M * M / eps;
}

LipschitzBudget make_budget(const Problem& p) {
    LipschitzBudget b;
    b.L_f = p.op->lipschitz();
    Rng rng(0xB0D6E7F00D5EEDull);  // pinned: the budget is a pure function of the problem
    b.M = p.map->jacobian_norm_bound(rng);
    b.L_g = p.map->jacobian_lipschitz_bound();
    return b;
}

// ---- trace CSV ---------------------------------------------------------------

namespace {

constexpr const char* kTraceHeader = "k,eps,phi_eps,grad_norm,branch,reduced,alpha,tau";

void append_g17(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out += buf;
}

}  // namespace

std::string render_trace_csv(const Trace& t) {
    std::string out = kTraceHeader;
    out += '\n';
    for (const TraceRow& r : t.rows) {
        out += std::to_string(r.k);
        out += ',';
        append_g17(out, r.eps);
        out += ',';
        append_g17(out, r.phi);
        out += ',';
        append_g17(out, r.grad_norm);
        out += ',';
        out += r.branch;
        out += ',';
        out += r.reduced ? '1' : '0';
        out += ',';
        append_g17(out, r.alpha);
        out += ',';
        append_g17(out, r.tau);
        out += '\n';
    }
    return out;
}

void write_trace_csv(const std::filesystem::path& path, const Trace& t) {
    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path.string());
    const std::string body = render_trace_csv(t);
    const bool ok = std::fwrite(body.data(), 1, body.size(), f) == body.size();
    std::fclose(f);
    if (!ok) throw IoError("write failed: " + path.string());
}

Trace read_trace_csv(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot open for reading: " + path.string());
    std::string text;
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
    std::fclose(f);

    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kTraceHeader)
        throw IoError("trace csv: bad header in " + path.string());
    Trace t;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TraceRow r{};
        char branch = 0;
        int reduced = 0;
        const int n = std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%c,%d,%lf,%lf", &r.k, &r.eps,
                                  &r.phi, &r.grad_norm, &branch, &reduced, &r.alpha, &r.tau);
        if (n != 8) throw IoError("trace csv: bad row in " + path.string());
        r.branch = branch;
        r.reduced = reduced != 0;
        r.phi_u = r.phi_v = std::numeric_limits<double>::quiet_NaN();
        t.rows.push_back(r);
    }
    return t;
}

// ---- descent loop ------------------------------------------------------------

bool reduction_fires(double grad_norm, double eps, double sigma, double gamma) {
    return grad_norm < sigma * gamma * eps;
}

namespace {

// Everything the loop knows about the current iterate.  The feature forward
// pass is cached so a smoothing reduction only redoes the dual and the vjp.
struct IterateState {
    Tensor x;
    FeatureEval eval;
    double f_val = 0.0;
    Tensor grad_f;
    double r_val = 0.0;
    Tensor grad_r;

    double phi() const { return f_val + r_val; }
};

IterateState make_state(const Problem& p, Tensor x, double eps) {
    IterateState s;
    s.x = std::move(x);
    s.eval = p.map->forward_eval(s.x);
    const Measurement res = residual(*p.op, s.x, *p.data);
    s.f_val = 0.5 * res.squared_norm();
    s.grad_f = p.op->adjoint_real(res);
    s.r_val = smoothed_l21(s.eval.g, eps);
    s.grad_r = p.map->vjp_from(s.eval, dual_maximizer(s.eval.g, eps));
    return s;
}

void rescale_smoothing(const Problem& p, IterateState& s, double eps) {
    s.r_val = smoothed_l21(s.eval.g, eps);
    s.grad_r = p.map->vjp_from(s.eval, dual_maximizer(s.eval.g, eps));
}

double resolve_eps0(const Problem& p, const Tensor& x0, const SolverConfig& cfg) {
    if (cfg.eps0 > 0.0) return cfg.eps0;
    const BlockVectors g = p.map->forward(x0);
    double mx = 0.0;
    for (int i = 0; i < g.blocks; ++i) mx = std::max(mx, g.block_norm(i));
    return std::max(1e-6, 0.1 * mx);
}

[[noreturn]] void fail_nonfinite(const char* where, int k, double eps, double alpha) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "%s: non-finite value at iteration %d (eps=%.6g, alpha=%.6g)", where, k, eps,
                  alpha);
    throw NumericalFailure(buf);
}

enum class BranchPolicy { select, v_only };

SolveResult run_descent(const Problem& p, const Tensor& x0, const SolverConfig& cfg,
                        const StepSchedule& sched, int iters, BranchPolicy policy) {
    p.validate();
    cfg.validate();
    sched.validate();

    SolveResult out;
    out.eps0 = resolve_eps0(p, x0, cfg);
    if (sched.mode == StepMode::theory) {
        out.budget = make_budget(p);
    } else {
        out.budget.L_f = p.op->lipschitz();
    }

    const int m = p.map->blocks();
    double eps = out.eps0;
    IterateState cur = make_state(p, x0, eps);
    if (!std::isfinite(cur.phi())) fail_nonfinite("solve", 0, eps, 0.0);
    double ls_alpha = sched.ls_alpha0;

    for (int k = 0; k < iters; ++k) {
        double alpha = 0.0, tau = 0.0;
        Tensor z, v;
        double phi_v = 0.0;
        bool have_v = false;

        switch (sched.mode) {
            case StepMode::theory: {
                const double L = out.budget.total(m, eps);
                alpha = 1.0 / (cfg.delta1 * L);
                tau = 0.5 * alpha;  // alpha*beta/(alpha+beta) with beta = alpha
                break;
            }
            case StepMode::fixed_list: {
                const std::size_t i = std::min<std::size_t>(k, sched.alphas.size() - 1);
                alpha = sched.alphas[i];
                tau = sched.taus.empty()
                          ? 0.5 * alpha
                          : sched.taus[std::min<std::size_t>(k, sched.taus.size() - 1)];
                break;
            }
            case StepMode::line_search: {
                double a = ls_alpha / sched.ls_shrink;
                for (;;) {
                    if (a < 1e-18)
                        throw NumericalFailure("line search: step underflow, no descent found");
                    Tensor z_try = add_scaled(cur.x, -a, cur.grad_f);
                    Tensor v_try = add_scaled(z_try, -a, cur.grad_r);
                    const double phiv = p.objective(v_try, eps);
                    Tensor diff = add_scaled(v_try, -1.0, cur.x);
                    const double dist2 = dot(diff, diff);
                    if (std::isfinite(phiv) &&
                        phiv - cur.phi() <= -sched.ls_descent * dist2) {
                        alpha = a;
                        // An explicit tau list freezes the u-candidate step while
                        // alpha keeps backtracking; otherwise tau tracks alpha.
                        tau = sched.taus.empty()
                                  ? 0.5 * a
                                  : sched.taus[std::min<std::size_t>(k, sched.taus.size() - 1)];
                        z = std::move(z_try);
                        v = std::move(v_try);
                        phi_v = phiv;
                        have_v = true;
                        break;
                    }
                    a *= sched.ls_shrink;
                }
                ls_alpha = alpha;
                break;
            }
        }

        if (!have_v) {
            z = add_scaled(cur.x, -alpha, cur.grad_f);
            v = add_scaled(z, -alpha, cur.grad_r);
            phi_v = p.objective(v, eps);
        }

        char branch;
        IterateState next;
        double phi_u = std::numeric_limits<double>::quiet_NaN();
        if (policy == BranchPolicy::v_only) {
            branch = 'v';
            next = make_state(p, std::move(v), eps);
        } else {
            const Tensor grad_r_z = smoothed_l21_gradient(*p.map, z, eps);
            Tensor u = add_scaled(z, -tau, grad_r_z);
            phi_u = p.objective(u, eps);
            if (phi_u <= phi_v) {
                branch = 'u';
                next = make_state(p, std::move(u), eps);
            } else {
                branch = 'v';
                next = make_state(p, std::move(v), eps);
            }
        }
        if (!std::isfinite(next.phi()) || !all_finite(next.x))
            fail_nonfinite("solve", k, eps, alpha);

        Tensor grad_phi_next = next.grad_f;
        axpy(1.0, next.grad_r, grad_phi_next);
        const double grad_norm = norm(grad_phi_next);
        const bool reduced = reduction_fires(grad_norm, eps, cfg.sigma, cfg.gamma);

        out.trace.rows.push_back(
            {k, eps, cur.phi(), grad_norm, branch, reduced, alpha, tau, phi_u, phi_v});

        cur = std::move(next);
        if (reduced) {
            eps *= cfg.gamma;
            ++out.reductions;
            rescale_smoothing(p, cur, eps);
        }
        if (cfg.sigma * eps < cfg.eps_tol) {
            out.terminated = true;
            break;
        }
    }

    out.x = std::move(cur.x);
    out.eps_final = eps;
    return out;
}

}  // namespace

StepOutcome lda_step(const Problem& p, const Tensor& x, double eps, double alpha, double tau) {
    p.validate();
    if (!(eps > 0.0) || !(alpha > 0.0) || !(tau > 0.0))
        throw std::invalid_argument("lda_step: eps, alpha, tau must be positive");
    const Tensor z = add_scaled(x, -alpha, fidelity_gradient(*p.op, x, *p.data));
    const Tensor u = add_scaled(z, -tau, smoothed_l21_gradient(*p.map, z, eps));
    const Tensor v = add_scaled(z, -alpha, smoothed_l21_gradient(*p.map, x, eps));
    StepOutcome o;
    o.phi_u = p.objective(u, eps);
    o.phi_v = p.objective(v, eps);
    if (o.phi_u <= o.phi_v) {
        o.branch = 'u';
        o.x = u;
        o.phi_next = o.phi_u;
    } else {
        o.branch = 'v';
        o.x = v;
        o.phi_next = o.phi_v;
    }
    return o;
}

SolveResult solve(const Problem& p, const Tensor& x0, const SolverConfig& cfg,
                  const StepSchedule& sched) {
    return run_descent(p, x0, cfg, sched, cfg.max_iters, BranchPolicy::select);
}

SolveResult gd_descent(const Problem& p, const Tensor& x0, int phases, const SolverConfig& cfg,
                       const StepSchedule& sched) {
    if (phases < 1) throw std::invalid_argument("gd_descent: phases must be >= 1");
    return run_descent(p, x0, cfg, sched, phases, BranchPolicy::v_only);
}

SolveResult agd_descent(const Problem& p, const Tensor& x0, int phases,
                        const std::vector<double>& momentum, bool smooth_reg_term,
                        const SolverConfig& cfg, const StepSchedule& sched) {
    p.validate();
    cfg.validate();
    sched.validate();
    if (phases < 1) throw std::invalid_argument("agd_descent: phases must be >= 1");
    if (momentum.empty()) throw std::invalid_argument("agd_descent: momentum list is empty");
    if (sched.mode == StepMode::line_search)
        throw std::invalid_argument("agd_descent: line search is not defined for momentum steps");

    SolveResult out;
    out.eps0 = resolve_eps0(p, x0, cfg);
    if (sched.mode == StepMode::theory) {
        out.budget = make_budget(p);
    } else {
        out.budget.L_f = p.op->lipschitz();
    }

    const int m = p.map->blocks();
    double eps = out.eps0;
    Tensor x = x0, x_prev = x0;

    for (int k = 0; k < phases; ++k) {
        double alpha;
        if (sched.mode == StepMode::theory) {
            alpha = 1.0 / (cfg.delta1 * out.budget.total(m, eps));
        } else {
            alpha = sched.alphas[std::min<std::size_t>(k, sched.alphas.size() - 1)];
        }
        const double theta = momentum[std::min<std::size_t>(k, momentum.size() - 1)];
        const double phi_here = p.objective(x, eps);

        Tensor x_next = add_scaled(x, -alpha, fidelity_gradient(*p.op, x, *p.data));
        if (smooth_reg_term) axpy(-alpha, smoothed_l21_gradient(*p.map, x, eps), x_next);
        // theta * (x - x_prev) as one difference: exactly zero on the first
        // step when the history is seeded with x_prev = x0.
        axpy(theta, add_scaled(x, -1.0, x_prev), x_next);

        if (!all_finite(x_next)) fail_nonfinite("agd_descent", k, eps, alpha);
        const double grad_norm = norm(p.gradient(x_next, eps));
        const bool reduced = reduction_fires(grad_norm, eps, cfg.sigma, cfg.gamma);
        out.trace.rows.push_back({k, eps, phi_here, grad_norm, 'a', reduced, alpha, alpha,
                                  std::numeric_limits<double>::quiet_NaN(),
                                  std::numeric_limits<double>::quiet_NaN()});
        x_prev = std::move(x);
        x = std::move(x_next);
        if (reduced) {
            eps *= cfg.gamma;
            ++out.reductions;
        }
        if (cfg.sigma * eps < cfg.eps_tol) {
            out.terminated = true;
            break;
        }
    }
    out.x = std::move(x);
    out.eps_final = eps;
    return out;
}

// ---- a-priori bounds ----------------------------------------------------------

double fixed_eps_first_hit_bound(double delta1, double delta2, double L_eps, double phi0,
                                 double phi_star, int blocks, double eps, double eta) {
    return delta1 * delta2 * L_eps * (2.0 * phi0 - 2.0 * phi_star + blocks * eps) /
           ((delta2 - 1.0) * eta * eta);
}

BoundConstants theorem_constants(const LipschitzBudget& budget, int blocks, double phi0,
                                 double phi_star, double eps0, double gamma, double sigma,
                                 double delta1, double delta2) {
    const double m = static_cast<double>(blocks);
    const double gap = 2.0 * phi0 - 2.0 * phi_star + m * eps0;
    const double smooth_part = budget.L_f + std::sqrt(m) * budget.L_g;
    BoundConstants c;
    c.c1 = delta1 * delta2 * smooth_part * gap /
           ((delta2 - 1.0) * sigma * sigma * eps0 * eps0 * gamma * gamma);
    c.c2 = delta1 * delta2 * budget.M * budget.M * gap /
           ((delta2 - 1.0) * sigma * sigma * eps0 * eps0 * eps0 * gamma * gamma * gamma);
    return c;
}

double total_iteration_bound(const BoundConstants& c, double gamma, double sigma, double eps0,
                             double eps_tol) {
    const double g2 = gamma * gamma, g3 = g2 * gamma, g5 = g2 * g3;
    const double t2 = c.c1 * sigma * sigma * eps0 * eps0 / (1.0 - g2) / (eps_tol * eps_tol);
    const double t3 =
        c.c2 * sigma * sigma * sigma * eps0 * eps0 * eps0 / (1.0 - g3) / (eps_tol * eps_tol * eps_tol);
    const double corr =
        (c.c1 * g2 + c.c2 * g3 - (c.c1 + c.c2) * g5) / ((1.0 - g2) * (1.0 - g3));
    return t2 + t3 - corr;
}

}  // namespace lda
