#pragma once

#include "lda/tensor.hpp"

namespace lda {

// Peak signal-to-noise ratio in dB against a reference with the given peak
// value.  Capped at 100 dB so identical images produce a finite number.
double psnr(const Tensor& x, const Tensor& ref, double peak = 1.0);

// ||x - ref|| / ||ref||
double rel_err(const Tensor& x, const Tensor& ref);

// Mean structural similarity over an 11x11 Gaussian window (sigma 1.5),
// stabilizers C1=(0.01*peak)^2, C2=(0.03*peak)^2.  Only windows fully inside
// the image contribute; images smaller than the window are rejected.
double ssim(const Tensor& x, const Tensor& ref, double peak = 1.0);

}  // namespace lda
