#include "lda/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <thread>

#include <Eigen/Dense>

#include "lda/errors.hpp"
#include "lda/flat_io.hpp"
#include "lda/image_io.hpp"
#include "lda/metrics.hpp"
#include "lda/regularizer.hpp"
#include "lda/synthesis.hpp"
#include "lda/training.hpp"

namespace lda {

// ---- config parsing ------------------------------------------------------------

namespace {

void reject_unknown_keys(const nlohmann::json& j, const char* where,
                         std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) {
                ok = true;
                break;
            }
        if (!ok)
            throw ConfigError(std::string("config: unknown key '") + key + "' in " + where);
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string("config: bad value for '") + key + "'");
    }
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& root) {
    if (!root.is_object()) throw ConfigError("config: expected a JSON object");
    const nlohmann::json& j =
        root.value("kind", "") == "experiment_manifest" ? root.at("config") : root;

    reject_unknown_keys(j, "the top level",
                        {"schema", "task", "seed", "threads", "image", "map", "solver",
                         "schedule", "block_cs", "mri"});
    if (get_or<int>(j, "schema", -1) != 1) throw ConfigError("config: schema must be 1");

    ExperimentConfig c;
    c.task = get_or<std::string>(j, "task", c.task);
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);
    c.threads = get_or<int>(j, "threads", c.threads);

    if (j.contains("image")) {
        const auto& ji = j.at("image");
        reject_unknown_keys(ji, "'image'", {"kind", "count", "height", "width", "noise_sigma"});
        c.image.kind = get_or<std::string>(ji, "kind", c.image.kind);
        c.image.count = get_or<int>(ji, "count", c.image.count);
        c.image.height = get_or<int>(ji, "height", c.image.height);
        c.image.width = get_or<int>(ji, "width", c.image.width);
        c.image.noise_sigma = get_or<double>(ji, "noise_sigma", c.image.noise_sigma);
    }
    if (j.contains("map")) {
        const auto& jm = j.at("map");
        reject_unknown_keys(jm, "'map'", {"variant", "width", "delta", "params_file"});
        c.map.variant = get_or<std::string>(jm, "variant", c.map.variant);
        c.map.width = get_or<int>(jm, "width", c.map.width);
        c.map.delta = get_or<double>(jm, "delta", c.map.delta);
        c.map.params_file = get_or<std::string>(jm, "params_file", c.map.params_file);
    }
    if (j.contains("solver")) {
        const auto& js = j.at("solver");
        reject_unknown_keys(js, "'solver'",
                            {"eps0", "gamma", "sigma", "eps_tol", "max_iters", "delta1",
                             "delta2"});
        if (js.contains("eps0") && !js.at("eps0").is_null())
            c.solver.eps0 = js.at("eps0").get<double>();
        c.solver.gamma = get_or<double>(js, "gamma", c.solver.gamma);
        c.solver.sigma = get_or<double>(js, "sigma", c.solver.sigma);
        c.solver.eps_tol = get_or<double>(js, "eps_tol", c.solver.eps_tol);
        c.solver.max_iters = get_or<int>(js, "max_iters", c.solver.max_iters);
        c.solver.delta1 = get_or<double>(js, "delta1", c.solver.delta1);
        c.solver.delta2 = get_or<double>(js, "delta2", c.solver.delta2);
    }
    if (j.contains("schedule")) {
        const auto& js = j.at("schedule");
        reject_unknown_keys(js, "'schedule'",
                            {"mode", "alphas", "taus", "ls_descent", "ls_shrink", "ls_alpha0"});
        const std::string mode = get_or<std::string>(js, "mode", "theory");
        if (mode == "theory") {
            c.schedule.mode = StepMode::theory;
        } else if (mode == "fixed_list") {
            c.schedule.mode = StepMode::fixed_list;
        } else if (mode == "line_search") {
            c.schedule.mode = StepMode::line_search;
        } else {
            throw ConfigError("config: schedule.mode must be theory, fixed_list, or line_search");
        }
        c.schedule.alphas = get_or<std::vector<double>>(js, "alphas", {});
        c.schedule.taus = get_or<std::vector<double>>(js, "taus", {});
        c.schedule.ls_descent = get_or<double>(js, "ls_descent", c.schedule.ls_descent);
        c.schedule.ls_shrink = get_or<double>(js, "ls_shrink", c.schedule.ls_shrink);
        c.schedule.ls_alpha0 = get_or<double>(js, "ls_alpha0", c.schedule.ls_alpha0);
    }
    if (j.contains("block_cs")) {
        const auto& jb = j.at("block_cs");
        reject_unknown_keys(jb, "'block_cs'", {"ratio", "init_pairs", "init_ridge"});
        c.block_cs.ratio = get_or<double>(jb, "ratio", c.block_cs.ratio);
        c.block_cs.init_pairs = get_or<int>(jb, "init_pairs", c.block_cs.init_pairs);
        c.block_cs.init_ridge = get_or<double>(jb, "init_ridge", c.block_cs.init_ridge);
    }
    if (j.contains("mri")) {
        const auto& jm = j.at("mri");
        reject_unknown_keys(jm, "'mri'", {"mask_ratio"});
        c.mri.mask_ratio = get_or<double>(jm, "mask_ratio", c.mri.mask_ratio);
    }
    c.validate();
    return c;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json js{{"eps0", solver.eps0 > 0.0 ? nlohmann::json(solver.eps0)
                                                 : nlohmann::json(nullptr)},
                      {"gamma", solver.gamma},
                      {"sigma", solver.sigma},
                      {"eps_tol", solver.eps_tol},
                      {"max_iters", solver.max_iters},
                      {"delta1", solver.delta1},
                      {"delta2", solver.delta2}};
    const char* mode = schedule.mode == StepMode::theory       ? "theory"
                       : schedule.mode == StepMode::fixed_list ? "fixed_list"
                                                               : "line_search";
    nlohmann::json jsched{{"mode", mode},
                          {"alphas", schedule.alphas},
                          {"taus", schedule.taus},
                          {"ls_descent", schedule.ls_descent},
                          {"ls_shrink", schedule.ls_shrink},
                          {"ls_alpha0", schedule.ls_alpha0}};
    nlohmann::json out{{"schema", 1},
                       {"task", task},
                       {"seed", seed},
                       {"threads", threads},
                       {"image",
                        {{"kind", image.kind},
                         {"count", image.count},
                         {"height", image.height},
                         {"width", image.width},
                         {"noise_sigma", image.noise_sigma}}},
                       {"map",
                        {{"variant", map.variant},
                         {"width", map.width},
                         {"delta", map.delta},
                         {"params_file", map.params_file}}},
                       {"solver", js},
                       {"schedule", jsched}};
    if (task == "block_cs")
        out["block_cs"] = {{"ratio", block_cs.ratio},
                           {"init_pairs", block_cs.init_pairs},
                           {"init_ridge", block_cs.init_ridge}};
    if (task == "mri") out["mri"] = {{"mask_ratio", mri.mask_ratio}};
    return out;
}

void ExperimentConfig::validate() const {
    if (task != "denoise" && task != "block_cs" && task != "mri")
        throw ConfigError("config: task must be denoise, block_cs, or mri");
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    if (image.kind != "piecewise" && image.kind != "bumps" && image.kind != "mixed")
        throw ConfigError("config: image.kind must be piecewise, bumps, or mixed");
    if (image.count < 1 || image.height < 1 || image.width < 1)
        throw ConfigError("config: image count and shape must be positive");
    if (image.noise_sigma < 0.0) throw ConfigError("config: image.noise_sigma must be >= 0");
    if (map.variant != "identity" && map.variant != "finite_difference" &&
        map.variant != "conv_net")
        throw ConfigError("config: map.variant must be identity, finite_difference, or conv_net");
    if (map.variant == "conv_net" && map.params_file.empty() && map.width < 1)
        throw ConfigError("config: map.width must be >= 1");
    try {
        solver.validate();
        schedule.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (task == "block_cs") {
        if (!(block_cs.ratio > 0.0) || !(block_cs.ratio < 1.0))
            throw ConfigError("config: block_cs.ratio must lie in (0, 1)");
        if (block_cs.init_pairs < 1) throw ConfigError("config: block_cs.init_pairs must be >= 1");
        if (block_cs.init_ridge < 0.0) throw ConfigError("config: block_cs.init_ridge must be >= 0");
    }
    if (task == "mri") {
        if (!(mri.mask_ratio > 0.0) || mri.mask_ratio >= 1.0)
            throw ConfigError("config: mri.mask_ratio must lie in (0, 1)");
        if (image.height < 2 || image.width < 2)
            throw ConfigError("config: mri needs at least a 2x2 grid");
    }
}

// ---- block CS initializer --------------------------------------------------------

InitOperator init_block_cs(const DenseOperator& op, const std::vector<Tensor>& train,
                           double ridge) {
    if (train.empty()) throw std::invalid_argument("init_block_cs: no training pairs");
    const int n = op.cols(), rows = op.rows();
    const int N = static_cast<int>(train.size());

    Eigen::MatrixXd X(n, N), B(rows, N);
    for (int j = 0; j < N; ++j) {
        const Tensor& img = train[j];
        if (img.height() != op.image_height() || img.width() != op.image_width())
            throw std::invalid_argument("init_block_cs: training image shape mismatch");
        for (int i = 0; i < n; ++i) X(i, j) = img.data()[i];
        const Measurement b = op.apply(img);
        for (int r = 0; r < rows; ++r) B(r, j) = b.re[r];
    }
    Eigen::MatrixXd G = B * B.transpose();
    G.diagonal().array() += ridge;
    // Q^T = (B B^T + ridge I)^{-1} B X^T, solved with a symmetric factorization.
    const Eigen::MatrixXd Qt = G.ldlt().solve(B * X.transpose());

    InitOperator q;
    q.h = op.image_height();
    q.w = op.image_width();
    q.rows = rows;
    q.q.resize(static_cast<std::size_t>(n) * rows);
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < rows; ++r) q.q[static_cast<std::size_t>(i) * rows + r] = Qt(r, i);
    return q;
}

Tensor apply_init(const InitOperator& init, const Measurement& b) {
    if (static_cast<int>(b.re.size()) != init.rows || b.is_complex())
        throw std::invalid_argument("apply_init: measurement shape mismatch");
    Tensor x(init.h, init.w, 1);
    const int n = init.h * init.w;
    for (int i = 0; i < n; ++i) {
        const double* row = &init.q[static_cast<std::size_t>(i) * init.rows];
        double s = 0.0;
        for (int r = 0; r < init.rows; ++r) s += row[r] * b.re[r];
        x.data()[i] = s;
    }
    return x;
}

// ---- assembly ---------------------------------------------------------------------

AssembledProblem assemble(const ExperimentConfig& cfg) {
    cfg.validate();
    AssembledProblem out;
    const int h = cfg.image.height, w = cfg.image.width;

    // Fixed seed-chain order; everything downstream is a pure function of it.
    Rng master(cfg.seed);
    const std::uint64_t data_seed = master.fork_seed();
    const std::uint64_t op_seed = master.fork_seed();
    const std::uint64_t map_seed = master.fork_seed();
    const std::uint64_t init_seed = master.fork_seed();

    Rng data_rng(data_seed);
    out.clean = make_images(cfg.image.kind, cfg.image.count, h, w, data_rng);
    std::vector<Tensor> measured;
    measured.reserve(out.clean.size());
    for (const Tensor& img : out.clean)
        measured.push_back(cfg.image.noise_sigma > 0.0
                               ? add_noise(img, cfg.image.noise_sigma, data_rng)
                               : img);

    if (cfg.task == "denoise") {
        out.op = std::make_unique<IdentityOperator>(h, w);
    } else if (cfg.task == "block_cs") {
        Rng op_rng(op_seed);
        auto dense = std::make_unique<DenseOperator>(
            DenseOperator::gaussian_orthonormal(h, w, cfg.block_cs.ratio, op_rng));
        out.cs_rows = dense->rows();
        out.op = std::move(dense);
    } else {
        Rng op_rng(op_seed);
        auto dft = std::make_unique<MaskedDftOperator>(
            radial_mask(h, w, cfg.mri.mask_ratio, op_rng));
        out.mask_achieved_ratio = dft->mask().achieved_ratio();
        out.op = std::move(dft);
    }

    if (cfg.map.variant == "identity") {
        out.map = FeatureMap::identity(h, w);
    } else if (cfg.map.variant == "finite_difference") {
        out.map = FeatureMap::finite_difference(h, w);
    } else if (!cfg.map.params_file.empty()) {
        const PhaseParams p = load_params(cfg.map.params_file);
        out.map = FeatureMap::conv_net(h, w, p.net);
    } else {
        Rng map_rng(map_seed);
        ConvNetParams p = ConvNetParams::xavier(cfg.map.width, map_rng);
        p.delta = cfg.map.delta;
        out.map = FeatureMap::conv_net(h, w, std::move(p));
    }

    for (const Tensor& img : measured) out.data.push_back(out.op->apply(img));

    if (cfg.task == "denoise") {
        for (const Measurement& b : out.data) out.x0.push_back(out.op->adjoint_real(b));
    } else if (cfg.task == "block_cs") {
        Rng init_rng(init_seed);
        const std::vector<Tensor> pairs =
            make_images(cfg.image.kind, cfg.block_cs.init_pairs, h, w, init_rng);
        const auto& dense = static_cast<const DenseOperator&>(*out.op);
        const InitOperator q = init_block_cs(dense, pairs, cfg.block_cs.init_ridge);
        for (const Measurement& b : out.data) out.x0.push_back(apply_init(q, b));
    } else {
        for (std::size_t i = 0; i < out.data.size(); ++i) out.x0.emplace_back(h, w, 1);
    }
    return out;
}

// ---- experiment driver ---------------------------------------------------------------

namespace {

std::string indexed_name(const char* stem, int index, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%03d.%s", stem, index, ext);
    return buf;
}

nlohmann::json json_finite(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

}  // namespace

std::string render_metrics_csv(const std::vector<ImageOutcome>& images) {
    std::string out = "index,psnr,ssim,rel_err,iterations,reductions,eps_final\n";
    for (const ImageOutcome& im : images) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%d,%d,%.17g\n", im.index, im.psnr,
                      im.ssim, im.rel, im.iterations, im.reductions, im.eps_final);
        out += buf;
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir) {
    AssembledProblem ap = assemble(cfg);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory: " + out_dir.string());

    const int n_img = static_cast<int>(ap.clean.size());
    std::vector<SolveResult> solves(n_img);
    std::vector<std::exception_ptr> errors(n_img);

    auto solve_one = [&](int i) {
        Problem p{ap.op.get(), &ap.data[i], &*ap.map};
        solves[i] = solve(p, ap.x0[i], cfg.solver, cfg.schedule);
    };

    const int workers = std::min(cfg.threads, n_img);
    if (workers <= 1) {
        for (int i = 0; i < n_img; ++i) solve_one(i);
    } else {
        std::atomic<int> next{0};
        auto body = [&] {
            for (int i; (i = next.fetch_add(1)) < n_img;) {
                try {
                    solve_one(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int t = 0; t < workers; ++t) pool.emplace_back(body);
        for (auto& t : pool) t.join();
        for (int i = 0; i < n_img; ++i)
            if (errors[i]) std::rethrow_exception(errors[i]);
    }

    ExperimentResult res;
    res.mask_achieved_ratio = ap.mask_achieved_ratio;
    res.cs_rows = ap.cs_rows;
    res.budget = solves.empty() || cfg.schedule.mode != StepMode::theory
                     ? make_budget(Problem{ap.op.get(), &ap.data[0], &*ap.map})
                     : solves[0].budget;

    nlohmann::json jimages = nlohmann::json::array();
    const bool ssim_ok = cfg.image.height >= 11 && cfg.image.width >= 11;
    for (int i = 0; i < n_img; ++i) {
        const SolveResult& sr = solves[i];
        ImageOutcome im;
        im.index = i;
        im.psnr = psnr(sr.x, ap.clean[i]);
        im.ssim = ssim_ok ? ssim(sr.x, ap.clean[i]) : std::numeric_limits<double>::quiet_NaN();
        im.rel = rel_err(sr.x, ap.clean[i]);
        im.iterations = static_cast<int>(sr.trace.rows.size());
        im.reductions = sr.reductions;
        im.eps_final = sr.eps_final;
        im.eps0 = sr.eps0;
        im.terminated = sr.terminated;

        // Feature-norm map: blockwise norms of g at the reconstruction,
        // stretched to [0,1] for viewing; the true range goes to the manifest.
        const BlockVectors g = ap.map->forward(sr.x);
        Tensor fn(cfg.image.height, cfg.image.width, 1);
        double lo = g.block_norm(0), hi = lo;
        for (int b = 0; b < g.blocks; ++b) {
            const double v = g.block_norm(b);
            fn[b] = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        if (hi > lo)
            for (std::size_t b = 0; b < fn.size(); ++b) fn[b] = (fn[b] - lo) / (hi - lo);
        else
            fn.fill(0.5);
        im.featnorm_min = lo;
        im.featnorm_max = hi;

        const std::string recon = indexed_name("recon", i, "pgm");
        const std::string trace = indexed_name("trace", i, "csv");
        const std::string featn = indexed_name("featnorm", i, "pgm");
        write_pgm(out_dir / recon, sr.x);
        write_trace_csv(out_dir / trace, sr.trace);
        write_pgm(out_dir / featn, fn);

        jimages.push_back({{"index", i},
                           {"psnr", json_finite(im.psnr)},
                           {"ssim", json_finite(im.ssim)},
                           {"rel_err", json_finite(im.rel)},
                           {"iterations", im.iterations},
                           {"reductions", im.reductions},
                           {"eps_final", im.eps_final},
                           {"eps0", im.eps0},
                           {"terminated", im.terminated},
                           {"featnorm_min", json_finite(im.featnorm_min)},
                           {"featnorm_max", json_finite(im.featnorm_max)},
                           {"files",
                            {{"recon", recon}, {"trace", trace}, {"featnorm", featn}}}});
        res.images.push_back(im);
    }

    write_text_file(out_dir / "metrics.csv", render_metrics_csv(res.images));

    nlohmann::json manifest{{"schema", 1},
                            {"kind", "experiment_manifest"},
                            {"config", cfg.to_json()},
                            {"constants",
                             {{"L_f", res.budget.L_f},
                              {"L_g", res.budget.L_g},
                              {"M", res.budget.M}}},
                            {"images", jimages},
                            {"metrics_csv", "metrics.csv"}};
    if (cfg.task == "mri") {
        manifest["mask_achieved_ratio"] = res.mask_achieved_ratio;
        if (const auto* dft = dynamic_cast<const MaskedDftOperator*>(ap.op.get())) {
            Tensor mimg(cfg.image.height, cfg.image.width, 1);
            for (std::size_t i = 0; i < mimg.size(); ++i) mimg[i] = dft->mask().keep[i] ? 1.0 : 0.0;
            write_pgm(out_dir / "mask.pgm", mimg);
            manifest["mask_pgm"] = "mask.pgm";
        }
    }
    if (cfg.task == "block_cs") manifest["cs_rows"] = res.cs_rows;
    res.manifest_path = out_dir / "manifest.json";
    write_json(res.manifest_path, manifest);
    return res;
}

}  // namespace lda
