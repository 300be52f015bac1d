#include "lda/training.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "lda/errors.hpp"
#include "lda/flat_io.hpp"
#include "lda/regularizer.hpp"

namespace lda {

void PhaseParams::validate() const {
    if (alphas.empty() || alphas.size() != taus.size())
        throw std::invalid_argument("PhaseParams: alphas/taus must be non-empty and match");
    for (double a : alphas)
        if (!(a > 0.0)) throw std::invalid_argument("PhaseParams: alphas must be positive");
    for (double t : taus)
        if (!(t > 0.0)) throw std::invalid_argument("PhaseParams: taus must be positive");
    if (!(eps0 > 0.0)) throw std::invalid_argument("PhaseParams: eps0 must be positive");
    if (net.width < 1) throw std::invalid_argument("PhaseParams: net width must be >= 1");
}

void save_params(const std::filesystem::path& stem, const PhaseParams& p) {
    p.validate();
    std::vector<double> flat;
    for (const auto& layer : p.net.layers) flat.insert(flat.end(), layer.w.begin(), layer.w.end());
    flat.insert(flat.end(), p.alphas.begin(), p.alphas.end());
    flat.insert(flat.end(), p.taus.begin(), p.taus.end());
    flat.push_back(p.eps0);
    write_f64(stem.string() + ".f64", flat.data(), flat.size());

    nlohmann::json meta{{"schema", 1},
                        {"kind", "phase_params"},
                        {"width", p.net.width},
                        {"delta", p.net.delta},
                        {"phases", p.phases()}};
    write_json(stem.string() + ".json", meta);
}

PhaseParams load_params(const std::filesystem::path& stem) {
    const nlohmann::json meta = read_json(stem.string() + ".json");
    if (meta.value("kind", "") != "phase_params" || meta.value("schema", 0) != 1)
        throw IoError("load_params: not a phase_params sidecar: " + stem.string());
    PhaseParams p;
    const int width = meta.at("width").get<int>();
    const int phases = meta.at("phases").get<int>();
    p.net.width = width;
    p.net.delta = meta.at("delta").get<double>();

    const std::vector<double> flat = read_f64(stem.string() + ".f64");
    std::size_t off = 0;
    for (int l = 0; l < 4; ++l) {
        const int in_c = l == 0 ? 1 : width;
        p.net.layers[l] = ConvKernel(in_c, width);
        if (off + p.net.layers[l].w.size() > flat.size())
            throw IoError("load_params: flat file too short: " + stem.string());
        std::memcpy(p.net.layers[l].w.data(), &flat[off],
                    p.net.layers[l].w.size() * sizeof(double));
        off += p.net.layers[l].w.size();
    }
    if (off + 2 * phases + 1 != flat.size())
        throw IoError("load_params: flat file size mismatch: " + stem.string());
    p.alphas.assign(flat.begin() + off, flat.begin() + off + phases);
    p.taus.assign(flat.begin() + off + phases, flat.begin() + off + 2 * phases);
    p.eps0 = flat.back();
    p.validate();
    return p;
}

// ---- unrolled forward ----------------------------------------------------------

namespace {

struct PhaseState {
    Tensor x;
    FeatureEval eval;
    double f_val = 0.0;
    Tensor grad_f;
    double r_val = 0.0;
    Tensor grad_r;

    double phi() const { return f_val + r_val; }
};

PhaseState make_phase_state(const FeatureMap& map, const ForwardOperator& op,
                            const Measurement& b, Tensor x, double eps) {
    PhaseState s;
    s.x = std::move(x);
    s.eval = map.forward_eval(s.x);
    const Measurement res = op.apply(s.x) - b;
    s.f_val = 0.5 * res.squared_norm();
    s.grad_f = op.adjoint_real(res);
    s.r_val = smoothed_l21(s.eval.g, eps);
    s.grad_r = map.vjp_from(s.eval, dual_maximizer(s.eval.g, eps));
    return s;
}

double objective_at(const FeatureMap& map, const ForwardOperator& op, const Measurement& b,
                    const Tensor& x, double eps) {
    Measurement res = op.apply(x) - b;
    return 0.5 * res.squared_norm() + smoothed_l21(map.forward(x), eps);
}

}  // namespace

UnrollTape unroll_forward(const PhaseParams& theta, const ForwardOperator& op,
                          const TrainSample& s, const UnrollOptions& opt) {
    theta.validate();
    const FeatureMap map =
        FeatureMap::conv_net(op.image_height(), op.image_width(), theta.net);

    UnrollTape tape;
    tape.phases.reserve(theta.phases());
    double eps = theta.eps0;
    int reductions = 0;
    PhaseState cur = make_phase_state(map, op, s.b, s.x0, eps);

    for (int k = 0; k < theta.phases(); ++k) {
        const double alpha = theta.alphas[k];
        const double tau = theta.taus[k];
        const Tensor z = add_scaled(cur.x, -alpha, cur.grad_f);
        Tensor v = add_scaled(z, -alpha, cur.grad_r);

        char branch;
        PhaseState next;
        if (opt.force_v_branch) {
            branch = 'v';
            next = make_phase_state(map, op, s.b, std::move(v), eps);
        } else {
            const double phi_v = objective_at(map, op, s.b, v, eps);
            Tensor u = add_scaled(z, -tau, smoothed_l21_gradient(map, z, eps));
            const double phi_u = objective_at(map, op, s.b, u, eps);
            if (phi_u <= phi_v) {
                branch = 'u';
                next = make_phase_state(map, op, s.b, std::move(u), eps);
            } else {
                branch = 'v';
                next = make_phase_state(map, op, s.b, std::move(v), eps);
            }
        }
        if (!std::isfinite(next.phi()) || !all_finite(next.x))
            throw NumericalFailure("unroll_forward: non-finite iterate at phase " +
                                   std::to_string(k));

        tape.phases.push_back({cur.x, z, branch, eps, reductions, alpha, tau});

        Tensor grad_phi = next.grad_f;
        axpy(1.0, next.grad_r, grad_phi);
        if (reduction_fires(norm(grad_phi), eps, opt.sigma, opt.gamma)) {
            eps *= opt.gamma;
            ++reductions;
            next.r_val = smoothed_l21(next.eval.g, eps);
            next.grad_r = map.vjp_from(next.eval, dual_maximizer(next.eval.g, eps));
        }
        cur = std::move(next);
    }
    tape.x_out = std::move(cur.x);
    return tape;
}

// ---- unrolled backward ----------------------------------------------------------

ParamGrads unroll_backward(const PhaseParams& theta, const ForwardOperator& op,
                           const TrainSample& s, const UnrollTape& tape,
                           const Tensor& loss_grad_out, const UnrollOptions& opt) {
    theta.validate();
    if (static_cast<int>(tape.phases.size()) != theta.phases())
        throw std::invalid_argument("unroll_backward: tape depth does not match parameters");
    const FeatureMap map =
        FeatureMap::conv_net(op.image_height(), op.image_width(), theta.net);

    ParamGrads g;
    for (int l = 0; l < 4; ++l)
        g.layers[l] = ConvKernel(theta.net.layers[l].in_channels, theta.net.layers[l].out_channels);
    g.alphas.assign(theta.phases(), 0.0);
    g.taus.assign(theta.phases(), 0.0);

    Tensor xbar = loss_grad_out;
    for (int k = theta.phases() - 1; k >= 0; --k) {
        const PhaseRecord& rec = tape.phases[k];
        const double eps = rec.eps, alpha = rec.alpha, tau = rec.tau;

        Tensor zbar;
        Tensor x_extra;  // direct x_k dependence of the v branch via grad_r_eps(x_k)
        bool have_extra = false;
        double eps_k_bar = 0.0;

        if (rec.branch == 'u') {
            // u = z - tau * grad_r_eps(z)
            g.taus[k] -= dot(xbar, smoothed_l21_gradient(map, rec.z, eps));
            const GradPullback pb = smoothed_l21_gradient_pullback(map, rec.z, xbar, eps);
            zbar = add_scaled(xbar, -tau, pb.wrt_x);
            for (int l = 0; l < 4; ++l)
                for (std::size_t i = 0; i < g.layers[l].w.size(); ++i)
                    g.layers[l].w[i] -= tau * pb.wrt_layers[l].w[i];
            eps_k_bar = -tau * pb.wrt_eps;
        } else {
            // v = z - alpha * grad_r_eps(x_k)
            g.alphas[k] -= dot(xbar, smoothed_l21_gradient(map, rec.x, eps));
            const GradPullback pb = smoothed_l21_gradient_pullback(map, rec.x, xbar, eps);
            zbar = xbar;
            x_extra = pb.wrt_x;
            for (std::size_t i = 0; i < x_extra.size(); ++i) x_extra[i] *= -alpha;
            have_extra = true;
            for (int l = 0; l < 4; ++l)
                for (std::size_t i = 0; i < g.layers[l].w.size(); ++i)
                    g.layers[l].w[i] -= alpha * pb.wrt_layers[l].w[i];
            eps_k_bar = -alpha * pb.wrt_eps;
        }

        // z = x_k - alpha * grad_f(x_k); the fit gradient is affine in x.
        g.alphas[k] -= dot(zbar, fidelity_gradient(op, rec.x, s.b));
        Tensor xbar_next = add_scaled(zbar, -alpha, fidelity_hessian_apply(op, zbar));
        if (have_extra) axpy(1.0, x_extra, xbar_next);

        g.eps0 += eps_k_bar * std::pow(opt.gamma, rec.reductions_before);
        xbar = std::move(xbar_next);
    }
    (void)opt;
    return g;
}

double mse_loss(const Tensor& x, const Tensor& target) {
    check_same_shape(x, target, "mse_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - target[i];
        s += d * d;
    }
    return s / static_cast<double>(x.size());
}

Tensor mse_loss_grad(const Tensor& x, const Tensor& target) {
    check_same_shape(x, target, "mse_loss_grad");
    Tensor g = x;
    const double c = 2.0 / static_cast<double>(x.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = c * (x[i] - target[i]);
    return g;
}

// ---- staged Adam -----------------------------------------------------------------

void TrainConfig::validate() const {
    if (stages.empty()) throw std::invalid_argument("TrainConfig: no stages");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        if (stages[i].phases < 1)
            throw std::invalid_argument("TrainConfig: stage phase counts must be >= 1");
        if (i > 0 && stages[i].phases != stages[i - 1].phases + 2)
            throw std::invalid_argument("TrainConfig: each stage must add exactly two phases");
        if (stages[i].steps < 1) throw std::invalid_argument("TrainConfig: stage steps must be >= 1");
    }
    if (!(lr >= 0.0)) throw std::invalid_argument("TrainConfig: lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("TrainConfig: betas must lie in [0,1)");
    if (net_width < 1) throw std::invalid_argument("TrainConfig: net_width must be >= 1");
    if (!(alpha_init > 0.0) || !(eps0_init > 0.0))
        throw std::invalid_argument("TrainConfig: alpha_init and eps0_init must be positive");
}

namespace {

// The optimized vector: conv weights directly, then log(alpha), log(tau),
// log(eps0).  Working on logs keeps the positivity constraints implicit.
struct Surrogate {
    std::vector<double> v;
    std::array<std::size_t, 4> layer_off;
    std::size_t alpha_off = 0, tau_off = 0, eps0_off = 0;
    int phases = 0;

    static Surrogate from(const PhaseParams& p) {
        Surrogate s;
        s.phases = p.phases();
        for (int l = 0; l < 4; ++l) {
            s.layer_off[l] = s.v.size();
            s.v.insert(s.v.end(), p.net.layers[l].w.begin(), p.net.layers[l].w.end());
        }
        s.alpha_off = s.v.size();
        for (double a : p.alphas) s.v.push_back(std::log(a));
        s.tau_off = s.v.size();
        for (double t : p.taus) s.v.push_back(std::log(t));
        s.eps0_off = s.v.size();
        s.v.push_back(std::log(p.eps0));
        return s;
    }

    void write_back(PhaseParams& p) const {
        for (int l = 0; l < 4; ++l)
            std::memcpy(p.net.layers[l].w.data(), &v[layer_off[l]],
                        p.net.layers[l].w.size() * sizeof(double));
        for (int k = 0; k < phases; ++k) {
            p.alphas[k] = std::exp(v[alpha_off + k]);
            p.taus[k] = std::exp(v[tau_off + k]);
        }
        p.eps0 = std::exp(v[eps0_off]);
    }

    // Chain rule into log space: d/d log t = t * d/dt.
    std::vector<double> gradient(const PhaseParams& p, const ParamGrads& g) const {
        std::vector<double> out(v.size(), 0.0);
        for (int l = 0; l < 4; ++l)
            std::memcpy(&out[layer_off[l]], g.layers[l].w.data(),
                        g.layers[l].w.size() * sizeof(double));
        for (int k = 0; k < phases; ++k) {
            out[alpha_off + k] = p.alphas[k] * g.alphas[k];
            out[tau_off + k] = p.taus[k] * g.taus[k];
        }
        out[eps0_off] = p.eps0 * g.eps0;
        return out;
    }
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const ForwardOperator& op,
                  const std::vector<TrainSample>& samples) {
    cfg.validate();
    if (samples.empty()) throw std::invalid_argument("train: no samples");

    Rng rng(cfg.seed);
    PhaseParams params;
    params.net = ConvNetParams::xavier(cfg.net_width, rng);
    params.net.delta = cfg.delta;
    params.alphas.assign(cfg.stages.front().phases, cfg.alpha_init);
    params.taus.assign(cfg.stages.front().phases, 0.5 * cfg.alpha_init);
    params.eps0 = cfg.eps0_init;

    TrainResult result;
    double first_loss = -1.0;
    int global_step = 0;

    for (const TrainStage& stage : cfg.stages) {
        // Deeper stage: new phases warm-start from the last trained step sizes.
        while (params.phases() < stage.phases) {
            params.alphas.push_back(params.alphas.back());
            params.taus.push_back(params.taus.back());
        }
        UnrollOptions opt{cfg.sigma, cfg.gamma, cfg.force_v_branch};

        Surrogate sur = Surrogate::from(params);
        std::vector<double> m(sur.v.size(), 0.0), vv(sur.v.size(), 0.0);

        for (int step = 0; step < stage.steps; ++step) {
            std::vector<double> grad(sur.v.size(), 0.0);
            double loss_sum = 0.0;
            for (const TrainSample& s : samples) {
                const UnrollTape tape = unroll_forward(params, op, s, opt);
                loss_sum += mse_loss(tape.x_out, s.target);
                const ParamGrads pg = unroll_backward(params, op, s, tape,
                                                      mse_loss_grad(tape.x_out, s.target), opt);
                const std::vector<double> sg = sur.gradient(params, pg);
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += sg[i];
            }
            const double inv = 1.0 / static_cast<double>(samples.size());
            for (auto& gv : grad) gv *= inv;
            const double mean_loss = loss_sum * inv;
            result.loss_curve.emplace_back(global_step, mean_loss);
            ++global_step;

            if (first_loss < 0.0) first_loss = mean_loss;
            if (!std::isfinite(mean_loss) || mean_loss > cfg.diverge_factor * first_loss)
                throw NumericalFailure("train: loss diverged at step " +
                                       std::to_string(global_step - 1));

            if (cfg.lr == 0.0) continue;  // frozen run: leave theta bitwise untouched
            const double t = static_cast<double>(step + 1);
            const double bc1 = 1.0 - std::pow(cfg.beta1, t);
            const double bc2 = 1.0 - std::pow(cfg.beta2, t);
            for (std::size_t i = 0; i < sur.v.size(); ++i) {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
                vv[i] = cfg.beta2 * vv[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
                sur.v[i] -= cfg.lr * (m[i] / bc1) / (std::sqrt(vv[i] / bc2) + cfg.adam_eps);
            }
            sur.write_back(params);
        }
    }
    result.params = std::move(params);
    return result;
}

std::string render_loss_csv(const std::vector<std::pair<int, double>>& curve) {
    std::string out = "step,mean_loss\n";
    for (const auto& [step, loss] : curve) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "%d,%.17g\n", step, loss);
        out += buf;
    }
    return out;
}

}  // namespace lda
