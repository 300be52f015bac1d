#include "lda/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lda {

double psnr(const Tensor& x, const Tensor& ref, double peak) {
    check_same_shape(x, ref, "psnr");
    double mse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - ref[i];
        mse += d * d;
    }
    mse /= static_cast<double>(x.size());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

double rel_err(const Tensor& x, const Tensor& ref) {
    check_same_shape(x, ref, "rel_err");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - ref[i];
        num += d * d;
        den += ref[i] * ref[i];
    }
    if (den == 0.0) throw std::invalid_argument("rel_err: zero reference");
    return std::sqrt(num / den);
}

double ssim(const Tensor& x, const Tensor& ref, double peak) {
    check_same_shape(x, ref, "ssim");
    if (x.channels() != 1) throw std::invalid_argument("ssim: single channel only");
    constexpr int R = 5;  // 11x11 window
    const int h = x.height(), w = x.width();
    if (h < 2 * R + 1 || w < 2 * R + 1)
        throw std::invalid_argument("ssim: image smaller than the 11x11 window");

    double wgt[2 * R + 1][2 * R + 1];
    double wsum = 0.0;
    const double s2 = 2.0 * 1.5 * 1.5;
    for (int i = -R; i <= R; ++i)
        for (int j = -R; j <= R; ++j) {
            wgt[i + R][j + R] = std::exp(-(i * i + j * j) / s2);
            wsum += wgt[i + R][j + R];
        }
    for (auto& row : wgt)
        for (auto& v : row) v /= wsum;

    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);

    double acc = 0.0;
    long count = 0;
    for (int y = R; y < h - R; ++y) {
        for (int xx = R; xx < w - R; ++xx) {
            double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
            for (int i = -R; i <= R; ++i)
                for (int j = -R; j <= R; ++j) {
                    const double g = wgt[i + R][j + R];
                    const double a = x(y + i, xx + j);
                    const double b = ref(y + i, xx + j);
                    mx += g * a;
                    my += g * b;
                    sxx += g * a * a;
                    syy += g * b * b;
                    sxy += g * a * b;
                }
            sxx -= mx * mx;
            syy -= my * my;
            sxy -= mx * my;
            const double num = (2 * mx * my + c1) * (2 * sxy + c2);
            const double den = (mx * mx + my * my + c1) * (sxx + syy + c2);
            acc += num / den;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

}  // namespace lda
