#include "lda/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lda {

Tensor piecewise_constant_image(int h, int w, Rng& rng) {
    Tensor img(h, w, 1);
    const double bg = rng.uniform(0.2, 0.8);
    img.fill(bg);
    const int rects = 1 + static_cast<int>(rng.next_below(4));
    for (int r = 0; r < rects; ++r) {
        const int y0 = static_cast<int>(rng.next_below(h));
        const int x0 = static_cast<int>(rng.next_below(w));
        const int dy = 1 + static_cast<int>(rng.next_below(std::max(1, h - y0)));
        const int dx = 1 + static_cast<int>(rng.next_below(std::max(1, w - x0)));
        const double val = rng.uniform();
        for (int y = y0; y < std::min(h, y0 + dy); ++y)
            for (int x = x0; x < std::min(w, x0 + dx); ++x) img(y, x) = val;
    }
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
    return img;
}

Tensor smooth_bumps_image(int h, int w, Rng& rng) {
    Tensor img(h, w, 1);
    img.fill(rng.uniform(0.1, 0.3));
    const int bumps = 1 + static_cast<int>(rng.next_below(3));
    for (int b = 0; b < bumps; ++b) {
        const double cy = rng.uniform() * (h - 1);
        const double cx = rng.uniform() * (w - 1);
        const double amp = rng.uniform(0.3, 0.7);
        const double s = rng.uniform(0.08, 0.25) * std::max(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
                img(y, x) += amp * std::exp(-d2 / (2.0 * s * s));
            }
    }
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(img[i], 0.0, 1.0);
    return img;
}

std::vector<Tensor> make_images(const std::string& kind, int count, int h, int w, Rng& rng) {
    if (count < 1 || h < 1 || w < 1) throw std::invalid_argument("make_images: empty request");
    std::vector<Tensor> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        if (kind == "piecewise") {
            out.push_back(piecewise_constant_image(h, w, rng));
        } else if (kind == "bumps") {
            out.push_back(smooth_bumps_image(h, w, rng));
        } else if (kind == "mixed") {
            out.push_back(i % 2 == 0 ? piecewise_constant_image(h, w, rng)
                                     : smooth_bumps_image(h, w, rng));
        } else {
            throw std::invalid_argument("make_images: unknown kind '" + kind + "'");
        }
    }
    return out;
}

Tensor add_noise(const Tensor& img, double sigma, Rng& rng) {
    if (sigma < 0.0) throw std::invalid_argument("add_noise: sigma must be >= 0");
    Tensor out = img;
    if (sigma == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += sigma * rng.normal();
    return out;
}

}  // namespace lda
