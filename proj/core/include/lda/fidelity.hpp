#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "lda/rng.hpp"
#include "lda/tensor.hpp"

namespace lda {

// Measurement vector; real operators leave im empty, the k-space operator
// fills both planes.
struct Measurement {
    std::vector<double> re;
    std::vector<double> im;

    bool is_complex() const { return !im.empty(); }
    std::size_t size() const { return re.size(); }
    double squared_norm() const {
        double s = 0.0;
        for (double v : re) s += v * v;
        for (double v : im) s += v * v;
        return s;
    }
};

Measurement operator-(const Measurement& a, const Measurement& b);

// Linear measurement model A acting on real images.  adjoint_real returns
// Re(A^H y) as an image, which is all the real-variable calculus ever needs.
class ForwardOperator {
public:
    virtual ~ForwardOperator() = default;
    virtual int image_height() const = 0;
    virtual int image_width() const = 0;
    virtual int measurement_size() const = 0;
    virtual Measurement apply(const Tensor& x) const = 0;
    virtual Tensor adjoint_real(const Measurement& y) const = 0;
    virtual double lipschitz() const = 0;  // ||A||^2, the gradient Lipschitz constant of the fit term
};

// 0.5 * ||A x - b||^2 and its pieces.
Measurement residual(const ForwardOperator& op, const Tensor& x, const Measurement& b);
double fidelity_value(const ForwardOperator& op, const Tensor& x, const Measurement& b);
Tensor fidelity_gradient(const ForwardOperator& op, const Tensor& x, const Measurement& b);
// Symmetric linear part of the gradient: w -> Re(A^H A w); used when a
// gradient step is differentiated through.
Tensor fidelity_hessian_apply(const ForwardOperator& op, const Tensor& w);

// Explicit real matrix, rows x n, row-major; the block compressed-sensing
// sampling operator.
class DenseOperator final : public ForwardOperator {
public:
    DenseOperator(int h, int w, int rows, std::vector<double> row_major);

    // round(ratio * n) i.i.d. Gaussian rows, orthonormalized by two passes of
    // modified Gram-Schmidt (pairwise dot products land below 1e-10).
    static DenseOperator gaussian_orthonormal(int h, int w, double ratio, Rng& rng);

    int image_height() const override { return h_; }
    int image_width() const override { return w_; }
    int measurement_size() const override { return rows_; }
    Measurement apply(const Tensor& x) const override;
    Tensor adjoint_real(const Measurement& y) const override;
    double lipschitz() const override;

    int rows() const { return rows_; }
    int cols() const { return h_ * w_; }
    const std::vector<double>& matrix() const { return a_; }

private:
    int h_, w_, rows_;
    std::vector<double> a_;
    mutable double lip_ = -1.0;
};

// Centered k-space sampling pattern: keep[y*w + x] over the grid whose DC
// bin sits at (h/2, w/2).
struct SamplingMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> keep;

    int count() const;
    double achieved_ratio() const { return static_cast<double>(count()) / (h * w); }
};

// Pseudo-radial mask: straight lines through the center at evenly spaced
// angles (random common angular offset), lines added until the kept fraction
// reaches target_ratio; the DC bin is always kept.  Marked points come in
// centrally symmetric pairs up to grid clipping.
SamplingMask radial_mask(int h, int w, double target_ratio, Rng& rng);

// Undersampled unitary 2-D DFT: A = P F where F is the orthonormal discrete
// Fourier transform and P keeps the masked bins.  Rows of a unitary matrix,
// so lipschitz() is exactly 1.  The transform is evaluated as explicit
// row/column sums with precomputed twiddles in a fixed order, keeping results
// reproducible bit for bit; fine at desk scale.
class MaskedDftOperator final : public ForwardOperator {
public:
    explicit MaskedDftOperator(SamplingMask mask);

    int image_height() const override { return mask_.h; }
    int image_width() const override { return mask_.w; }
    int measurement_size() const override { return kept_; }
    Measurement apply(const Tensor& x) const override;
    Tensor adjoint_real(const Measurement& y) const override;
    double lipschitz() const override { return 1.0; }

    const SamplingMask& mask() const { return mask_; }

private:
    SamplingMask mask_;
    int kept_;
    std::vector<double> cos_h_, sin_h_, cos_w_, sin_w_;
    std::vector<int> bins_;  // row-major centered scan order -> DFT bin index
};

// Identity measurements (denoising): b = x.
class IdentityOperator final : public ForwardOperator {
public:
    IdentityOperator(int h, int w) : h_(h), w_(w) {}
    int image_height() const override { return h_; }
    int image_width() const override { return w_; }
    int measurement_size() const override { return h_ * w_; }
    Measurement apply(const Tensor& x) const override;
    Tensor adjoint_real(const Measurement& y) const override;
    double lipschitz() const override { return 1.0; }

private:
    int h_, w_;
};

}  // namespace lda
