#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lda/fidelity.hpp"
#include "lda/solver.hpp"
#include "lda/tensor.hpp"

namespace lda {

// ---- experiment configuration (JSON, schema 1) -------------------------------

struct ImageSpec {
    std::string kind = "piecewise";  // piecewise | bumps | mixed
    int count = 1;
    int height = 16, width = 16;
    double noise_sigma = 0.0;  // image-domain noise added before measuring
};

struct MapSpec {
    std::string variant = "finite_difference";  // identity | finite_difference | conv_net
    int width = 4;                              // conv_net feature dimension
    double delta = 0.01;
    std::string params_file;  // optional checkpoint stem; overrides width/delta
};

struct BlockCsSpec {
    double ratio = 0.25;       // sampling rows / pixels
    int init_pairs = 128;      // training pairs behind the linear initializer
    double init_ridge = 1e-8;
};

struct MriSpec {
    double mask_ratio = 0.2;
};

struct ExperimentConfig {
    std::string task = "denoise";  // denoise | block_cs | mri
    std::uint64_t seed = 1;
    int threads = 1;
    ImageSpec image;
    MapSpec map;
    SolverConfig solver;
    StepSchedule schedule;
    BlockCsSpec block_cs;
    MriSpec mri;

    // Strict parser: unknown keys and wrong schema numbers are rejected.
    // Accepts either a bare config or a manifest produced by run_experiment
    // (whose "config" member is then used), so a manifest re-runs bitwise.
    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void validate() const;
};

// Linear initializer for block compressed sensing:
//   Q = X B^T (B B^T + ridge I)^{-1}
// fitted on training pairs {x_j, b_j = A x_j}; reconstruction starts at Q b.
struct InitOperator {
    int h = 0, w = 0, rows = 0;
    std::vector<double> q;  // (h*w) x rows, row-major
};
InitOperator init_block_cs(const DenseOperator& op, const std::vector<Tensor>& train,
                           double ridge);
Tensor apply_init(const InitOperator& init, const Measurement& b);

// Everything assembled from a config with its fixed seed chain: operator,
// feature map, clean images, measurements, and start iterates.  Random
// state is consumed in a fixed documented order (data, operator, map,
// initializer), so the assembly is a pure function of the config.
struct AssembledProblem {
    std::unique_ptr<ForwardOperator> op;
    std::optional<FeatureMap> map;
    std::vector<Tensor> clean;
    std::vector<Measurement> data;
    std::vector<Tensor> x0;
    double mask_achieved_ratio = 0.0;  // mri only
    int cs_rows = 0;                   // block_cs only
};
AssembledProblem assemble(const ExperimentConfig& cfg);

struct ImageOutcome {
    int index = 0;
    double psnr = 0.0, ssim = 0.0, rel = 0.0;
    int iterations = 0, reductions = 0;
    double eps_final = 0.0, eps0 = 0.0;
    bool terminated = false;
    double featnorm_min = 0.0, featnorm_max = 0.0;
};

struct ExperimentResult {
    std::vector<ImageOutcome> images;
    LipschitzBudget budget;
    double mask_achieved_ratio = 0.0;
    int cs_rows = 0;
    std::filesystem::path manifest_path;
};

// Runs the configured reconstruction on every image and writes, per image,
// the reconstruction (PGM), the iteration trace (CSV), and the feature-norm
// map (PGM, min/max recorded in the manifest), plus metrics.csv and
// manifest.json.  Solves may run on config.threads threads; outputs are
// assembled in index order, so results do not depend on the thread count.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const std::filesystem::path& out_dir);

std::string render_metrics_csv(const std::vector<ImageOutcome>& images);

}  // namespace lda
