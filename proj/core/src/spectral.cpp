#include "lda/spectral.hpp"

#include <cmath>
#include <stdexcept>

namespace lda {

double spectral_norm(int domain_dim, const VecFn& apply, const VecFn& adjoint,
                     int iters, Rng& rng) {
    if (domain_dim <= 0) throw std::invalid_argument("spectral_norm: empty domain");
    std::vector<double> v(domain_dim);
    double nv = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        nv += x * x;
    }
    nv = std::sqrt(nv);
    if (nv == 0.0) v[0] = 1.0, nv = 1.0;
    for (auto& x : v) x /= nv;

    double rayleigh = 0.0;
    for (int it = 0; it < iters; ++it) {
        std::vector<double> w = adjoint(apply(v));
        double vw = 0.0, nw = 0.0;
        for (int i = 0; i < domain_dim; ++i) {
            vw += v[i] * w[i];
            nw += w[i] * w[i];
        }
        rayleigh = vw;  // v is unit, so this is v' A'A v
        nw = std::sqrt(nw);
        if (nw == 0.0) return 0.0;
        for (int i = 0; i < domain_dim; ++i) v[i] = w[i] / nw;
    }
    return std::sqrt(std::max(0.0, rayleigh));
}

}  // namespace lda
