#include <chrono>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lda/errors.hpp"
#include "lda/experiment.hpp"
#include "lda/flat_io.hpp"
#include "lda/image_io.hpp"
#include "lda/rng.hpp"
#include "lda/solver.hpp"
#include "lda/synthesis.hpp"
#include "lda/training.hpp"

namespace fs = std::filesystem;

namespace {

// Shared flags that mirror ExperimentConfig; a JSON config file provides the
// base values and any flag given on the command line overrides it.
struct SolveArgs {
    std::string config_path;
    std::string out_dir = "out";
    // optional overrides; CLI11 tells us which were actually set
    std::string task, image_kind, map_variant, mode, params_file;
    std::uint64_t seed = 0;
    int threads = 0, count = 0, height = 0, width = 0, max_iters = 0, map_width = 0;
    double noise = 0, eps0 = 0, gamma = 0, sigma = 0, eps_tol = 0, ratio = 0, mask_ratio = 0;
};

void apply_overrides(const CLI::App* cmd, const SolveArgs& a, lda::ExperimentConfig& cfg) {
    auto given = [&](const std::string& f) { return cmd->count(f) > 0; };
    if (given("--task")) cfg.task = a.task;
    if (given("--seed")) cfg.seed = a.seed;
    if (given("--threads")) cfg.threads = a.threads;
    if (given("--count")) cfg.image.count = a.count;
    if (given("--height")) cfg.image.height = a.height;
    if (given("--width")) cfg.image.width = a.width;
    if (given("--image-kind")) cfg.image.kind = a.image_kind;
    if (given("--noise")) cfg.image.noise_sigma = a.noise;
    if (given("--map")) cfg.map.variant = a.map_variant;
    if (given("--map-width")) cfg.map.width = a.map_width;
    if (given("--params")) cfg.map.params_file = a.params_file;
    if (given("--eps0")) cfg.solver.eps0 = a.eps0;
    if (given("--gamma")) cfg.solver.gamma = a.gamma;
    if (given("--sigma")) cfg.solver.sigma = a.sigma;
    if (given("--eps-tol")) cfg.solver.eps_tol = a.eps_tol;
    if (given("--max-iters")) cfg.solver.max_iters = a.max_iters;
    if (given("--ratio")) cfg.block_cs.ratio = a.ratio;
    if (given("--mask-ratio")) cfg.mri.mask_ratio = a.mask_ratio;
    if (given("--mode")) {
        if (a.mode == "theory") cfg.schedule.mode = lda::StepMode::theory;
        else if (a.mode == "fixed_list") cfg.schedule.mode = lda::StepMode::fixed_list;
        else if (a.mode == "line_search") cfg.schedule.mode = lda::StepMode::line_search;
        else throw lda::ConfigError("unknown step mode: " + a.mode);
    }
}

int run_solve(const CLI::App* cmd, const SolveArgs& a) {
    lda::ExperimentConfig cfg;
    if (!a.config_path.empty()) cfg = lda::ExperimentConfig::from_json(lda::read_json(a.config_path));
    apply_overrides(cmd, a, cfg);
    cfg.validate();
    const auto res = lda::run_experiment(cfg, a.out_dir);
    for (const auto& im : res.images)
        std::printf("image %03d  psnr %7.3f dB  rel_err %.3e  iters %4d  reductions %2d  eps_final %.3e%s\n",
                    im.index, im.psnr, im.rel, im.iterations, im.reductions, im.eps_final,
                    im.terminated ? "" : "  (iteration cap)");
    std::printf("manifest: %s\n", res.manifest_path.string().c_str());
    return 0;
}

std::vector<lda::TrainStage> parse_stages(const std::string& s) {
    std::vector<lda::TrainStage> stages;
    std::size_t pos = 0;
    while (pos < s.size()) {
        auto comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        const std::string item = s.substr(pos, comma - pos);
        const auto colon = item.find(':');
        if (colon == std::string::npos)
            throw lda::ConfigError("bad --stages entry (want PHASES:STEPS): " + item);
        stages.push_back({std::stoi(item.substr(0, colon)), std::stoi(item.substr(colon + 1))});
        pos = comma + 1;
    }
    if (stages.empty()) throw lda::ConfigError("--stages is empty");
    return stages;
}

struct TrainArgs {
    std::string out_dir = "train_out";
    std::string stages = "3:120,5:80";
    std::string kind = "mixed";
    int samples = 64, height = 16, width = 16, net_width = 4;
    double noise = 0.1, lr = 1e-3, alpha0 = 0.1, eps0 = 0.1, sigma = 1.0, gamma = 0.5;
    std::uint64_t seed = 1;
    bool force_v = false;
};

int run_train(const TrainArgs& a) {
    lda::TrainConfig tc;
    tc.stages = parse_stages(a.stages);
    tc.lr = a.lr;
    tc.sigma = a.sigma;
    tc.gamma = a.gamma;
    tc.net_width = a.net_width;
    tc.alpha_init = a.alpha0;
    tc.eps0_init = a.eps0;
    tc.seed = a.seed;
    tc.force_v_branch = a.force_v;
    tc.validate();

    // Denoising corpus: clean synthetic images, noisy copies as measurements.
    lda::Rng data_rng(a.seed * 2654435761ull + 1);
    const auto clean = lda::make_images(a.kind, a.samples, a.height, a.width, data_rng);
    lda::IdentityOperator op(a.height, a.width);
    std::vector<lda::TrainSample> samples;
    samples.reserve(clean.size());
    for (const auto& img : clean) {
        lda::TrainSample s;
        s.target = img;
        const auto noisy = lda::add_noise(img, a.noise, data_rng);
        s.b = op.apply(noisy);
        s.x0 = noisy;
        samples.push_back(std::move(s));
    }

    const auto res = lda::train(tc, op, samples);
    fs::create_directories(a.out_dir);
    lda::write_text_file(fs::path(a.out_dir) / "loss.csv", lda::render_loss_csv(res.loss_curve));
    lda::save_params(fs::path(a.out_dir) / "params", res.params);
    std::printf("trained %d phases, %zu Adam steps\n", res.params.phases(), res.loss_curve.size());
    std::printf("loss %.6e -> %.6e\n", res.loss_curve.front().second, res.loss_curve.back().second);
    std::printf("checkpoint: %s\n", (fs::path(a.out_dir) / "params").string().c_str());
    return 0;
}

struct BenchArgs {
    int size = 33, width = 8, reps = 50;
};

int run_bench(const BenchArgs& a) {
    using clock = std::chrono::steady_clock;
    lda::Rng rng(7);
    lda::Tensor img(a.size, a.size);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();

    auto time_it = [&](const char* name, auto&& fn) {
        fn();  // warm up
        const auto t0 = clock::now();
        for (int r = 0; r < a.reps; ++r) fn();
        const double us =
            std::chrono::duration<double, std::micro>(clock::now() - t0).count() / a.reps;
        std::printf("%-28s %10.1f us/op\n", name, us);
    };

    auto net = lda::ConvNetParams::xavier(a.width, rng);
    lda::ConvKernel k = net.layers[0];
    time_it("conv2d 1->d", [&] { (void)lda::conv2d(img, k); });
    lda::Tensor wide = lda::conv2d(img, k);
    time_it("conv2d_transpose d->1", [&] { (void)lda::conv2d_transpose(wide, k); });

    auto convmap = lda::FeatureMap::conv_net(a.size, a.size, net);
    time_it("grad r_eps (conv net)", [&] { (void)lda::smoothed_l21_gradient(convmap, img, 0.05); });

    auto tv = lda::FeatureMap::finite_difference(a.size, a.size);
    lda::IdentityOperator op(a.size, a.size);
    const auto b = op.apply(img);
    lda::Problem p{&op, &b, &tv};
    time_it("lda_step (TV denoise)", [&] { (void)lda::lda_step(p, img, 0.05, 0.3, 0.15); });

    lda::Rng mrng(11);
    const auto mask = lda::radial_mask(a.size, a.size, 0.3, mrng);
    lda::MaskedDftOperator dft(mask);
    time_it("masked DFT apply", [&] { (void)dft.apply(img); });
    return 0;
}

struct MakeDataArgs {
    std::string out_dir = "data";
    std::string kind = "mixed";
    int count = 8, height = 33, width = 33;
    double noise = 0.0;
    std::uint64_t seed = 1;
};

int run_make_data(const MakeDataArgs& a) {
    lda::Rng rng(a.seed);
    auto imgs = lda::make_images(a.kind, a.count, a.height, a.width, rng);
    fs::create_directories(a.out_dir);
    nlohmann::json index;
    index["schema"] = 1;
    index["kind"] = "dataset_index";
    index["seed"] = a.seed;
    index["noise_sigma"] = a.noise;
    index["files"] = nlohmann::json::array();
    char name[32];
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        lda::Tensor img = a.noise > 0 ? lda::add_noise(imgs[i], a.noise, rng) : imgs[i];
        for (std::size_t j = 0; j < img.size(); ++j)
            img[j] = std::min(1.0, std::max(0.0, img[j]));
        std::snprintf(name, sizeof name, "img_%03zu.pgm", i);
        lda::write_pgm(fs::path(a.out_dir) / name, img, 16);
        index["files"].push_back(name);
    }
    lda::write_json(fs::path(a.out_dir) / "index.json", index);
    std::printf("wrote %zu images to %s\n", imgs.size(), a.out_dir.c_str());
    return 0;
}

int run_inspect(const std::string& path) {
    const auto t = lda::read_trace_csv(path);
    if (t.rows.empty()) {
        std::printf("%s: empty trace\n", path.c_str());
        return 0;
    }
    int nu = 0, nv = 0, na = 0, reductions = 0;
    for (const auto& r : t.rows) {
        if (r.branch == 'u') ++nu;
        else if (r.branch == 'v') ++nv;
        else ++na;
        if (r.reduced) ++reductions;
    }
    const auto& first = t.rows.front();
    const auto& last = t.rows.back();
    std::printf("%s: %zu iterations\n", path.c_str(), t.rows.size());
    std::printf("  branches      u=%d v=%d other=%d\n", nu, nv, na);
    std::printf("  reductions    %d  (eps %.6e -> %.6e)\n", reductions, first.eps, last.eps);
    std::printf("  phi_eps       %.9e -> %.9e\n", first.phi, last.phi);
    std::printf("  last grad     %.6e   alpha %.6e  tau %.6e\n", last.grad_norm, last.alpha,
                last.tau);
    int bad = 0;
    for (std::size_t i = 1; i < t.rows.size(); ++i)
        if (t.rows[i].eps == t.rows[i - 1].eps && t.rows[i].phi > t.rows[i - 1].phi) ++bad;
    std::printf("  fixed-eps phi increases: %d\n", bad);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learnable descent reconstruction toolkit"};
    app.require_subcommand(1);

    SolveArgs sa;
    auto* solve = app.add_subcommand("solve", "Run a reconstruction experiment");
    solve->add_option("--config,-c", sa.config_path, "JSON config or manifest to re-run");
    solve->add_option("--out,-o", sa.out_dir, "output directory");
    solve->add_option("--task", sa.task, "denoise | block_cs | mri");
    solve->add_option("--seed", sa.seed, "master seed");
    solve->add_option("--threads", sa.threads, "worker threads across images");
    solve->add_option("--count", sa.count, "number of synthetic images");
    solve->add_option("--height", sa.height, "image height");
    solve->add_option("--width", sa.width, "image width");
    solve->add_option("--image-kind", sa.image_kind, "piecewise | bumps | mixed");
    solve->add_option("--noise", sa.noise, "image-domain noise sigma");
    solve->add_option("--map", sa.map_variant, "identity | finite_difference | conv_net");
    solve->add_option("--map-width", sa.map_width, "conv net feature channels");
    solve->add_option("--params", sa.params_file, "trained checkpoint stem for conv_net");
    solve->add_option("--eps0", sa.eps0, "initial smoothing radius (<=0: data-scaled)");
    solve->add_option("--gamma", sa.gamma, "smoothing shrink factor");
    solve->add_option("--sigma", sa.sigma, "reduction threshold scale");
    solve->add_option("--eps-tol", sa.eps_tol, "termination tolerance");
    solve->add_option("--max-iters", sa.max_iters, "iteration cap");
    solve->add_option("--mode", sa.mode, "theory | fixed_list | line_search");
    solve->add_option("--ratio", sa.ratio, "block CS compression ratio");
    solve->add_option("--mask-ratio", sa.mask_ratio, "MRI mask sampling ratio");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "Train feature map and steps on synthetic denoising");
    train->add_option("--out,-o", ta.out_dir, "output directory");
    train->add_option("--stages", ta.stages, "comma list of PHASES:STEPS, e.g. 3:120,5:80");
    train->add_option("--samples", ta.samples, "training set size");
    train->add_option("--height", ta.height, "image height");
    train->add_option("--width", ta.width, "image width");
    train->add_option("--image-kind", ta.kind, "piecewise | bumps | mixed");
    train->add_option("--noise", ta.noise, "noise sigma on measurements");
    train->add_option("--lr", ta.lr, "Adam learning rate");
    train->add_option("--net-width", ta.net_width, "conv net feature channels");
    train->add_option("--alpha0", ta.alpha0, "initial per-phase step size");
    train->add_option("--eps0", ta.eps0, "initial smoothing radius");
    train->add_option("--sigma", ta.sigma, "reduction threshold scale");
    train->add_option("--gamma", ta.gamma, "smoothing shrink factor");
    train->add_option("--seed", ta.seed, "seed for init and data");
    train->add_flag("--force-v", ta.force_v, "train the plain-descent ablation (v branch only)");

    BenchArgs ba;
    auto* bench = app.add_subcommand("bench", "Time the hot kernels");
    bench->add_option("--size", ba.size, "image side");
    bench->add_option("--net-width", ba.width, "conv net feature channels");
    bench->add_option("--reps", ba.reps, "repetitions per kernel");

    MakeDataArgs ma;
    auto* mk = app.add_subcommand("make-data", "Write a synthetic PGM dataset");
    mk->add_option("--out,-o", ma.out_dir, "output directory");
    mk->add_option("--count", ma.count, "number of images");
    mk->add_option("--height", ma.height, "image height");
    mk->add_option("--width", ma.width, "image width");
    mk->add_option("--kind", ma.kind, "piecewise | bumps | mixed");
    mk->add_option("--noise", ma.noise, "noise sigma added before quantization");
    mk->add_option("--seed", ma.seed, "dataset seed");

    std::string trace_path;
    auto* inspect = app.add_subcommand("inspect-trace", "Summarize a trace CSV");
    inspect->add_option("trace", trace_path, "trace CSV path")->required();

    try {
        app.parse(argc, argv);
        if (solve->parsed()) return run_solve(solve, sa);
        if (train->parsed()) return run_train(ta);
        if (bench->parsed()) return run_bench(ba);
        if (mk->parsed()) return run_make_data(ma);
        if (inspect->parsed()) return run_inspect(trace_path);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const lda::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const lda::NumericalFailure& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const lda::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
