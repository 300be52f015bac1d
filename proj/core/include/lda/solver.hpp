#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lda/feature_map.hpp"
#include "lda/fidelity.hpp"
#include "lda/regularizer.hpp"
#include "lda/tensor.hpp"

namespace lda {

// One reconstruction problem: minimize 0.5||Ax - b||^2 + r(g(x)) where the
// group term is smoothed at the solver's current radius.
struct Problem {
    const ForwardOperator* op = nullptr;
    const Measurement* data = nullptr;
    const FeatureMap* map = nullptr;

    void validate() const;
    double objective(const Tensor& x, double eps) const;   // phi_eps(x)
    Tensor gradient(const Tensor& x, double eps) const;    // grad phi_eps(x)
};

struct SolverConfig {
    // eps0 <= 0 selects the data-scaled default 0.1 * max_i ||g_i(x0)||
    // (floored at 1e-6 so a flat start still smooths).
    double eps0 = -1.0;
    double gamma = 0.5;    // smoothing shrink factor, in (0,1)
    double sigma = 1.0;    // reduction threshold scale, > 0
    double eps_tol = 1e-3; // terminate once sigma * eps < eps_tol
    int max_iters = 200;
    // Theory-mode step window: alpha in [1/(delta1 L), 1/(delta2 L)], 1 < delta2 <= delta1.
    double delta1 = 1.5;
    double delta2 = 1.5;

    void validate() const;
};

enum class StepMode { theory, fixed_list, line_search };

struct StepSchedule {
    StepMode mode = StepMode::theory;
    // fixed_list: per-iteration values, last entry repeated past the end.
    // Empty taus fall back to tau_k = alpha_k / 2.
    std::vector<double> alphas;
    std::vector<double> taus;
    // line_search: accept alpha once
    //   phi_eps(v) - phi_eps(x) <= -ls_descent * ||v - x||^2,
    // shrinking by ls_shrink; each iteration starts from the previous
    // accepted alpha divided by ls_shrink.
    double ls_descent = 0.35;
    double ls_shrink = 0.5;
    double ls_alpha0 = 1.0;

    void validate() const;
};

// Constants feeding the theory-mode step size L(eps) = L_f + sqrt(m) L_g + M^2/eps.
struct LipschitzBudget {
    double L_f = 0.0;
    double L_g = 0.0;
    double M = 0.0;

    double total(int blocks, double eps) const;
};
LipschitzBudget make_budget(const Problem& p);

struct TraceRow {
    int k;
    double eps;        // smoothing radius the step used
    double phi;        // phi_eps(x_k) at that radius, before the step
    double grad_norm;  // ||grad phi_eps(x_{k+1})||, the reduction test value
    char branch;       // 'u' or 'v' ('a' for the momentum baseline)
    bool reduced;      // whether the radius shrank after this step
    double alpha, tau;
    // Selection values, kept in memory for invariant checks; not serialized.
    double phi_u, phi_v;
};

struct Trace {
    std::vector<TraceRow> rows;
};

// CSV with a pinned 8-column header; floating point values are rendered with
// %.17g so reading them back restores the exact doubles.
std::string render_trace_csv(const Trace& t);
void write_trace_csv(const std::filesystem::path& path, const Trace& t);
Trace read_trace_csv(const std::filesystem::path& path);

// Descent step at smoothing radius eps:
//   z = x - alpha grad_f(x)
//   u = z - tau  grad_r_eps(z)
//   v = z - alpha grad_r_eps(x)
// and x_next is whichever of u, v has the smaller phi_eps (ties pick u).
struct StepOutcome {
    Tensor x;
    char branch;
    double phi_next;   // phi_eps at the accepted iterate
    double phi_u, phi_v;
};
StepOutcome lda_step(const Problem& p, const Tensor& x, double eps, double alpha, double tau);

// Smoothing update: eps shrinks to gamma*eps exactly when the fresh gradient
// norm has dropped below sigma*gamma*eps (strict).
bool reduction_fires(double grad_norm, double eps, double sigma, double gamma);

struct SolveResult {
    Tensor x;
    Trace trace;
    double eps_final = 0.0;
    int reductions = 0;
    bool terminated = false;  // stopping rule hit before max_iters ran out
    LipschitzBudget budget;
    double eps0 = 0.0;  // resolved value (data-scaled default filled in)
};

// Full loop: step, record, test reduction, stop once sigma*eps (with eps
// already updated) drops below eps_tol.  Throws NumericalFailure if an
// iterate or objective stops being finite.
SolveResult solve(const Problem& p, const Tensor& x0, const SolverConfig& cfg,
                  const StepSchedule& sched);

// Plain proximal-style descent: the v update only, no u branch.  Same
// smoothing schedule and termination as solve.
SolveResult gd_descent(const Problem& p, const Tensor& x0, int phases,
                       const SolverConfig& cfg, const StepSchedule& sched);

// Momentum descent x_{k+1} = x_k - alpha grad_f(x_k) + theta_k (x_k - x_{k-1}).
// The classical form ignores the group term entirely; with
// smooth_reg_term = true the smoothed gradient -alpha grad_r_eps(x_k) is
// included, making the iteration a descent on the same objective family the
// other methods use.  momentum entries repeat their last value past the end.
SolveResult agd_descent(const Problem& p, const Tensor& x0, int phases,
                        const std::vector<double>& momentum, bool smooth_reg_term,
                        const SolverConfig& cfg, const StepSchedule& sched);

// ---- a-priori iteration bounds (theory mode) --------------------------------

// Iterations needed at fixed eps until ||grad phi_eps|| <= eta:
//   delta1 delta2 L_eps (2 phi_eps(x0) - 2 phi_star + m eps) / ((delta2 - 1) eta^2).
double fixed_eps_first_hit_bound(double delta1, double delta2, double L_eps,
                                 double phi0, double phi_star, int blocks, double eps,
                                 double eta);

// Constants of the total-iteration bound.  Both use the weaker (delta2 - 1)
// denominator, the variant every per-segment budget provably satisfies.
struct BoundConstants {
    double c1 = 0.0;
    double c2 = 0.0;
};
BoundConstants theorem_constants(const LipschitzBudget& budget, int blocks, double phi0,
                                 double phi_star, double eps0, double gamma, double sigma,
                                 double delta1, double delta2);

// Total iterations until sigma*eps_k < eps_tol:
//   c1 sigma^2 eps0^2 / (1-gamma^2) * eps_tol^-2
// + c2 sigma^3 eps0^3 / (1-gamma^3) * eps_tol^-3
// - (c1 gamma^2 + c2 gamma^3 - (c1+c2) gamma^5) / ((1-gamma^2)(1-gamma^3)).
double total_iteration_bound(const BoundConstants& c, double gamma, double sigma,
                             double eps0, double eps_tol);

}  // namespace lda
