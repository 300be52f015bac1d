#pragma once

#include <functional>
#include <vector>

#include "lda/rng.hpp"

namespace lda {

using VecFn = std::function<std::vector<double>(const std::vector<double>&)>;

// Largest singular value of the linear operator given by a matching
// forward/adjoint pair, estimated by power iteration on the normal operator.
// The Rayleigh quotient sequence is nondecreasing, so with enough iterations
// the estimate approaches the true value from below; clustered leading
// singular values still give a value-accurate estimate.
// Returns 0 for the zero operator.
double spectral_norm(int domain_dim, const VecFn& apply, const VecFn& adjoint,
                     int iters, Rng& rng);

}  // namespace lda
