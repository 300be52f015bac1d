#pragma once

#include <string>
#include <vector>

#include "lda/rng.hpp"
#include "lda/tensor.hpp"

namespace lda {

// Piecewise-constant cartoon: a flat background with one to four random
// axis-aligned rectangles, values clipped to [0,1].  Only uniform draws, so
// pipelines built on these images involve no transcendental functions.
Tensor piecewise_constant_image(int h, int w, Rng& rng);

// One to three Gaussian bumps on a flat background, clipped to [0,1].
Tensor smooth_bumps_image(int h, int w, Rng& rng);

// kind: "piecewise", "bumps", or "mixed" (alternating).
std::vector<Tensor> make_images(const std::string& kind, int count, int h, int w, Rng& rng);

// Additive white Gaussian noise, not clipped.
Tensor add_noise(const Tensor& img, double sigma, Rng& rng);

}  // namespace lda
