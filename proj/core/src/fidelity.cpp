#include "lda/fidelity.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "lda/spectral.hpp"

namespace lda {

Measurement operator-(const Measurement& a, const Measurement& b) {
    if (a.re.size() != b.re.size() || a.im.size() != b.im.size())
        throw std::invalid_argument("Measurement subtraction: size mismatch");
    Measurement out = a;
    for (std::size_t i = 0; i < out.re.size(); ++i) out.re[i] -= b.re[i];
    for (std::size_t i = 0; i < out.im.size(); ++i) out.im[i] -= b.im[i];
    return out;
}

Measurement residual(const ForwardOperator& op, const Tensor& x, const Measurement& b) {
    return op.apply(x) - b;
}

double fidelity_value(const ForwardOperator& op, const Tensor& x, const Measurement& b) {
    return 0.5 * residual(op, x, b).squared_norm();
}

Tensor fidelity_gradient(const ForwardOperator& op, const Tensor& x, const Measurement& b) {
    return op.adjoint_real(residual(op, x, b));
}

Tensor fidelity_hessian_apply(const ForwardOperator& op, const Tensor& w) {
    return op.adjoint_real(op.apply(w));
}

// ---- DenseOperator ---------------------------------------------------------

DenseOperator::DenseOperator(int h, int w, int rows, std::vector<double> row_major)
    : h_(h), w_(w), rows_(rows), a_(std::move(row_major)) {
    if (h < 1 || w < 1 || rows < 1) throw std::invalid_argument("DenseOperator: empty shape");
    if (a_.size() != static_cast<std::size_t>(rows) * h * w)
        throw std::invalid_argument("DenseOperator: matrix size mismatch");
}

DenseOperator DenseOperator::gaussian_orthonormal(int h, int w, double ratio, Rng& rng) {
    const int n = h * w;
    if (!(ratio > 0.0) || !(ratio < 1.0))
        throw std::invalid_argument("gaussian_orthonormal: ratio must lie in (0, 1)");
    const int rows = std::max(1, static_cast<int>(std::lround(ratio * n)));
    std::vector<double> a(static_cast<std::size_t>(rows) * n);
    for (auto& v : a) v = rng.normal();

    // Two passes of modified Gram-Schmidt; the second pass scrubs the
    // rounding left by the first.  Gaussian rows are almost surely
    // independent, but a degenerate row is redrawn just in case.
    for (int pass = 0; pass < 2; ++pass) {
        for (int r = 0; r < rows; ++r) {
            double* row = &a[static_cast<std::size_t>(r) * n];
            for (int p = 0; p < r; ++p) {
                const double* prev = &a[static_cast<std::size_t>(p) * n];
                double d = 0.0;
                for (int c = 0; c < n; ++c) d += row[c] * prev[c];
                for (int c = 0; c < n; ++c) row[c] -= d * prev[c];
            }
            double nn = 0.0;
            for (int c = 0; c < n; ++c) nn += row[c] * row[c];
            nn = std::sqrt(nn);
            if (nn < 1e-10) {
                for (int c = 0; c < n; ++c) row[c] = rng.normal();
                --r;
                continue;
            }
            for (int c = 0; c < n; ++c) row[c] /= nn;
        }
    }
    return DenseOperator(h, w, rows, std::move(a));
}

Measurement DenseOperator::apply(const Tensor& x) const {
    if (x.height() != h_ || x.width() != w_ || x.channels() != 1)
        throw std::invalid_argument("DenseOperator::apply: image shape mismatch");
    const int n = h_ * w_;
    Measurement y;
    y.re.resize(rows_);
    for (int r = 0; r < rows_; ++r) {
        const double* row = &a_[static_cast<std::size_t>(r) * n];
        double s = 0.0;
        for (int c = 0; c < n; ++c) s += row[c] * x.data()[c];
        y.re[r] = s;
    }
    return y;
}

Tensor DenseOperator::adjoint_real(const Measurement& y) const {
    if (static_cast<int>(y.re.size()) != rows_ || y.is_complex())
        throw std::invalid_argument("DenseOperator::adjoint_real: measurement shape mismatch");
    const int n = h_ * w_;
    Tensor x(h_, w_, 1);
    for (int r = 0; r < rows_; ++r) {
        const double* row = &a_[static_cast<std::size_t>(r) * n];
        const double v = y.re[r];
        for (int c = 0; c < n; ++c) x.data()[c] += v * row[c];
    }
    return x;
}

double DenseOperator::lipschitz() const {
    if (lip_ >= 0.0) return lip_;
    Rng rng(0x11A57C0FFEE5EEDull);  // pinned: the constant is a pure function of the matrix
    auto fwd = [&](const std::vector<double>& v) {
        const int n = h_ * w_;
        std::vector<double> out(rows_);
        for (int r = 0; r < rows_; ++r) {
            const double* row = &a_[static_cast<std::size_t>(r) * n];
            double s = 0.0;
            for (int c = 0; c < n; ++c) s += row[c] * v[c];
            out[r] = s;
        }
        return out;
    };
    auto adj = [&](const std::vector<double>& v) {
        const int n = h_ * w_;
        std::vector<double> out(n, 0.0);
        for (int r = 0; r < rows_; ++r) {
            const double* row = &a_[static_cast<std::size_t>(r) * n];
            for (int c = 0; c < n; ++c) out[c] += v[r] * row[c];
        }
        return out;
    };
    const double s = spectral_norm(h_ * w_, fwd, adj, 300, rng);
    lip_ = s * s;
    return lip_;
}

// ---- SamplingMask / radial_mask --------------------------------------------

int SamplingMask::count() const {
    int c = 0;
    for (auto k : keep) c += k;
    return c;
}

SamplingMask radial_mask(int h, int w, double target_ratio, Rng& rng) {
    if (h < 2 || w < 2) throw std::invalid_argument("radial_mask: grid too small");
    if (!(target_ratio > 0.0) || target_ratio >= 1.0)
        throw std::invalid_argument("radial_mask: target_ratio must lie in (0, 1)");
    SamplingMask m;
    m.h = h;
    m.w = w;
    m.keep.assign(static_cast<std::size_t>(h) * w, 0);
    const int cy = h / 2, cx = w / 2;
    m.keep[static_cast<std::size_t>(cy) * w + cx] = 1;

    const int total = h * w;
    const int want = static_cast<int>(std::ceil(target_ratio * total));
    const double offset = rng.uniform() * std::numbers::pi;
    const int tmax = h + w;

    int lines = 0;
    int kept = m.count();
    const int max_lines = 4 * (h + w);
    while (kept < want && lines < max_lines) {
        ++lines;
        // Re-rake all angles so the spokes stay evenly spread as lines are added.
        for (auto& k : m.keep) k = 0;
        m.keep[static_cast<std::size_t>(cy) * w + cx] = 1;
        for (int j = 0; j < lines; ++j) {
            const double th = offset + std::numbers::pi * j / lines;
            const double sy = std::sin(th), sx = std::cos(th);
            for (int t = 0; t <= tmax; ++t) {
                const int dy = static_cast<int>(std::lround(t * sy));
                const int dx = static_cast<int>(std::lround(t * sx));
                if (cy + dy >= 0 && cy + dy < h && cx + dx >= 0 && cx + dx < w)
                    m.keep[static_cast<std::size_t>(cy + dy) * w + (cx + dx)] = 1;
                if (cy - dy >= 0 && cy - dy < h && cx - dx >= 0 && cx - dx < w)
                    m.keep[static_cast<std::size_t>(cy - dy) * w + (cx - dx)] = 1;
            }
        }
        kept = m.count();
    }
    // Straight spokes saturate near 100%, but guard against pathological
    // targets by growing centered boxes.
    for (int r = 1; kept < want && r <= std::max(h, w); ++r) {
        for (int y = std::max(0, cy - r); y <= std::min(h - 1, cy + r); ++y)
            for (int x = std::max(0, cx - r); x <= std::min(w - 1, cx + r); ++x)
                m.keep[static_cast<std::size_t>(y) * w + x] = 1;
        kept = m.count();
    }
    return m;
}

// ---- MaskedDftOperator -------------------------------------------------------

MaskedDftOperator::MaskedDftOperator(SamplingMask mask) : mask_(std::move(mask)) {
    const int h = mask_.h, w = mask_.w;
    if (h < 1 || w < 1 || mask_.keep.size() != static_cast<std::size_t>(h) * w)
        throw std::invalid_argument("MaskedDftOperator: bad mask");
    kept_ = mask_.count();
    if (kept_ == 0) throw std::invalid_argument("MaskedDftOperator: empty mask");
    cos_h_.resize(h);
    sin_h_.resize(h);
    for (int k = 0; k < h; ++k) {
        cos_h_[k] = std::cos(2.0 * std::numbers::pi * k / h);
        sin_h_[k] = std::sin(2.0 * std::numbers::pi * k / h);
    }
    cos_w_.resize(w);
    sin_w_.resize(w);
    for (int k = 0; k < w; ++k) {
        cos_w_[k] = std::cos(2.0 * std::numbers::pi * k / w);
        sin_w_[k] = std::sin(2.0 * std::numbers::pi * k / w);
    }
    const int cy = h / 2, cx = w / 2;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask_.keep[static_cast<std::size_t>(y) * w + x]) continue;
            const int u = ((y - cy) % h + h) % h;
            const int v = ((x - cx) % w + w) % w;
            bins_.push_back(u * w + v);
        }
}

Measurement MaskedDftOperator::apply(const Tensor& x) const {
    const int h = mask_.h, w = mask_.w;
    if (x.height() != h || x.width() != w || x.channels() != 1)
        throw std::invalid_argument("MaskedDftOperator::apply: image shape mismatch");
    // Columns first, then rows; real input so the column pass starts from
    // zero imaginary parts.
    std::vector<double> cre(static_cast<std::size_t>(h) * w), cim(cre.size());
    for (int u = 0; u < h; ++u)
        for (int x2 = 0; x2 < w; ++x2) {
            double sr = 0.0, si = 0.0;
            for (int y = 0; y < h; ++y) {
                const int idx = (u * y) % h;
                const double v = x(y, x2);
                sr += v * cos_h_[idx];
                si -= v * sin_h_[idx];
            }
            cre[static_cast<std::size_t>(u) * w + x2] = sr;
            cim[static_cast<std::size_t>(u) * w + x2] = si;
        }
    const double scale = 1.0 / std::sqrt(static_cast<double>(h) * w);
    std::vector<double> fre(cre.size()), fim(cre.size());
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            double sr = 0.0, si = 0.0;
            for (int x2 = 0; x2 < w; ++x2) {
                const int idx = (v * x2) % w;
                const double ar = cre[static_cast<std::size_t>(u) * w + x2];
                const double ai = cim[static_cast<std::size_t>(u) * w + x2];
                sr += ar * cos_w_[idx] + ai * sin_w_[idx];
                si += ai * cos_w_[idx] - ar * sin_w_[idx];
            }
            fre[static_cast<std::size_t>(u) * w + v] = sr * scale;
            fim[static_cast<std::size_t>(u) * w + v] = si * scale;
        }
    Measurement y;
    y.re.resize(bins_.size());
    y.im.resize(bins_.size());
    for (std::size_t i = 0; i < bins_.size(); ++i) {
        y.re[i] = fre[bins_[i]];
        y.im[i] = fim[bins_[i]];
    }
    return y;
}

Tensor MaskedDftOperator::adjoint_real(const Measurement& y) const {
    const int h = mask_.h, w = mask_.w;
    if (y.re.size() != bins_.size() || y.im.size() != bins_.size())
        throw std::invalid_argument("MaskedDftOperator::adjoint_real: measurement shape mismatch");
    std::vector<double> fre(static_cast<std::size_t>(h) * w, 0.0), fim(fre.size(), 0.0);
    for (std::size_t i = 0; i < bins_.size(); ++i) {
        fre[bins_[i]] = y.re[i];
        fim[bins_[i]] = y.im[i];
    }
    // Inverse transform (conjugate twiddles), rows then columns, real part out.
    std::vector<double> cre(fre.size()), cim(fre.size());
    for (int u = 0; u < h; ++u)
        for (int x2 = 0; x2 < w; ++x2) {
            double sr = 0.0, si = 0.0;
            for (int v = 0; v < w; ++v) {
                const int idx = (v * x2) % w;
                const double ar = fre[static_cast<std::size_t>(u) * w + v];
                const double ai = fim[static_cast<std::size_t>(u) * w + v];
                sr += ar * cos_w_[idx] - ai * sin_w_[idx];
                si += ai * cos_w_[idx] + ar * sin_w_[idx];
            }
            cre[static_cast<std::size_t>(u) * w + x2] = sr;
            cim[static_cast<std::size_t>(u) * w + x2] = si;
        }
    const double scale = 1.0 / std::sqrt(static_cast<double>(h) * w);
    Tensor out(h, w, 1);
    for (int y2 = 0; y2 < h; ++y2)
        for (int x2 = 0; x2 < w; ++x2) {
            double sr = 0.0;
            for (int u = 0; u < h; ++u) {
                const int idx = (u * y2) % h;
                sr += cre[static_cast<std::size_t>(u) * w + x2] * cos_h_[idx] -
                      cim[static_cast<std::size_t>(u) * w + x2] * sin_h_[idx];
            }
            out(y2, x2) = sr * scale;
        }
    return out;
}

// ---- IdentityOperator --------------------------------------------------------

Measurement IdentityOperator::apply(const Tensor& x) const {
    if (x.height() != h_ || x.width() != w_ || x.channels() != 1)
        throw std::invalid_argument("IdentityOperator::apply: image shape mismatch");
    Measurement y;
    y.re.assign(x.data(), x.data() + x.size());
    return y;
}

Tensor IdentityOperator::adjoint_real(const Measurement& y) const {
    if (static_cast<int>(y.re.size()) != h_ * w_ || y.is_complex())
        throw std::invalid_argument("IdentityOperator::adjoint_real: measurement shape mismatch");
    Tensor x(h_, w_, 1);
    for (std::size_t i = 0; i < y.re.size(); ++i) x[i] = y.re[i];
    return x;
}

}  // namespace lda
