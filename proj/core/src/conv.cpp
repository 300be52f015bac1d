#include "lda/conv.hpp"

#include <stdexcept>

namespace lda {

Tensor conv2d(const Tensor& in, const ConvKernel& k) {
    if (in.channels() != k.in_channels)
        throw std::invalid_argument("conv2d: input channels do not match kernel");
    const int h = in.height(), w = in.width();
    const int ci = k.in_channels, co = k.out_channels;
    Tensor out(h, w, co);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* o = &out(y, x, 0);
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= w) continue;
                    const double* src = &in(sy, sx, 0);
                    const double* wp = &k.w[static_cast<std::size_t>(ky * 3 + kx) * ci * co];
                    for (int ic = 0; ic < ci; ++ic) {
                        const double v = src[ic];
                        const double* wrow = wp + static_cast<std::size_t>(ic) * co;
                        for (int oc = 0; oc < co; ++oc) o[oc] += v * wrow[oc];
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv2d_transpose(const Tensor& in, const ConvKernel& k) {
    if (in.channels() != k.out_channels)
        throw std::invalid_argument("conv2d_transpose: input channels do not match kernel");
    const int h = in.height(), w = in.width();
    const int ci = k.in_channels, co = k.out_channels;
    Tensor out(h, w, ci);
    // Gather form of the adjoint: out(y,x,ic) sums the cotangent entries whose
    // conv2d window read in(y,x,ic), i.e. offsets appear mirrored.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double* o = &out(y, x, 0);
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y - (ky - 1);
                if (sy < 0 || sy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x - (kx - 1);
                    if (sx < 0 || sx >= w) continue;
                    const double* src = &in(sy, sx, 0);
                    const double* wp = &k.w[static_cast<std::size_t>(ky * 3 + kx) * ci * co];
                    for (int ic = 0; ic < ci; ++ic) {
                        const double* wrow = wp + static_cast<std::size_t>(ic) * co;
                        double acc = 0.0;
                        for (int oc = 0; oc < co; ++oc) acc += src[oc] * wrow[oc];
                        o[ic] += acc;
                    }
                }
            }
        }
    }
    return out;
}

ConvKernel conv2d_weight_grad(const Tensor& in, const Tensor& cotangent) {
    if (in.height() != cotangent.height() || in.width() != cotangent.width())
        throw std::invalid_argument("conv2d_weight_grad: image shapes differ");
    const int h = in.height(), w = in.width();
    const int ci = in.channels(), co = cotangent.channels();
    ConvKernel g(ci, co);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double* ct = &cotangent(y, x, 0);
            for (int ky = 0; ky < 3; ++ky) {
                const int sy = y + ky - 1;
                if (sy < 0 || sy >= h) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int sx = x + kx - 1;
                    if (sx < 0 || sx >= w) continue;
                    const double* src = &in(sy, sx, 0);
                    double* wp = &g.w[static_cast<std::size_t>(ky * 3 + kx) * ci * co];
                    for (int ic = 0; ic < ci; ++ic) {
                        const double v = src[ic];
                        double* wrow = wp + static_cast<std::size_t>(ic) * co;
                        for (int oc = 0; oc < co; ++oc) wrow[oc] += v * ct[oc];
                    }
                }
            }
        }
    }
    return g;
}

}  // namespace lda
