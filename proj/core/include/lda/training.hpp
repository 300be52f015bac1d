#pragma once

#include <array>
#include <filesystem>
#include <utility>
#include <vector>

#include "lda/feature_map.hpp"
#include "lda/fidelity.hpp"
#include "lda/solver.hpp"

namespace lda {

// Learnable quantities: conv net weights, per-phase step sizes, and the
// initial smoothing radius.  Step sizes and eps0 must stay positive; the
// optimizer works on their logs.
struct PhaseParams {
    ConvNetParams net;
    std::vector<double> alphas;
    std::vector<double> taus;
    double eps0 = 0.1;

    int phases() const { return static_cast<int>(alphas.size()); }
    void validate() const;
};

void save_params(const std::filesystem::path& stem, const PhaseParams& p);
PhaseParams load_params(const std::filesystem::path& stem);

struct TrainSample {
    Tensor target;   // clean image the loss compares against
    Measurement b;   // measurements fed to the unrolled solver
    Tensor x0;       // initial iterate
};

struct UnrollOptions {
    double sigma = 1.0;
    double gamma = 0.5;
    // Train the plain-descent ablation: every phase takes the v branch.
    bool force_v_branch = false;
};

// What the backward pass needs about one executed phase: the incoming
// iterate, the fit-gradient point z, which branch won, and the smoothing
// state.  eps = eps0 * gamma^reductions_before.
struct PhaseRecord {
    Tensor x;
    Tensor z;
    char branch;
    double eps;
    int reductions_before;
    double alpha, tau;
};

struct UnrollTape {
    std::vector<PhaseRecord> phases;
    Tensor x_out;
};

// Fixed-depth run of the descent phases (no termination test: the unrolled
// network has a fixed number of phases).  The smoothing radius follows the
// same reduction rule as the solver.
UnrollTape unroll_forward(const PhaseParams& theta, const ForwardOperator& op,
                          const TrainSample& s, const UnrollOptions& opt);

struct ParamGrads {
    std::array<ConvKernel, 4> layers;
    std::vector<double> alphas;
    std::vector<double> taus;
    double eps0 = 0.0;
};

// Reverse-mode gradients of loss(x_out) through the recorded phases.  Only
// the branch that was selected is differentiated; block partitions and the
// reduction booleans stay frozen at their forward values, and the eps0
// gradient is chained exactly through eps_k = eps0 * gamma^{j_k}.  Gradients
// are with respect to the direct parameters (not their logs).
ParamGrads unroll_backward(const PhaseParams& theta, const ForwardOperator& op,
                           const TrainSample& s, const UnrollTape& tape,
                           const Tensor& loss_grad_out, const UnrollOptions& opt);

// Mean squared error over pixels and its gradient.
double mse_loss(const Tensor& x, const Tensor& target);
Tensor mse_loss_grad(const Tensor& x, const Tensor& target);

struct TrainStage {
    int phases;
    int steps;
};

struct TrainConfig {
    std::vector<TrainStage> stages;  // phase counts strictly increasing
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double sigma = 1.0, gamma = 0.5;
    int net_width = 4;
    double delta = 0.01;
    double alpha_init = 0.1;   // taus start at alpha_init / 2
    double eps0_init = 0.1;
    std::uint64_t seed = 1;
    double diverge_factor = 1e3;  // abort once mean loss exceeds this multiple of the start
    bool force_v_branch = false;

    void validate() const;
};

struct TrainResult {
    PhaseParams params;
    std::vector<std::pair<int, double>> loss_curve;  // (step, mean loss) per Adam step
};

// Staged full-batch Adam.  Each stage unrolls `phases` phases; when the next
// stage is deeper, the new per-phase step sizes warm-start from the last
// trained values.  Throws NumericalFailure when the loss diverges.
TrainResult train(const TrainConfig& cfg, const ForwardOperator& op,
                  const std::vector<TrainSample>& samples);

std::string render_loss_csv(const std::vector<std::pair<int, double>>& curve);

}  // namespace lda
