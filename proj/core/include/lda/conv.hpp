#pragma once

#include <vector>

#include "lda/tensor.hpp"

namespace lda {

// Bank of 3x3 convolution kernels, no bias term.
// weights[((ky*3 + kx)*in_channels + ic)*out_channels + oc]
struct ConvKernel {
    int in_channels = 0;
    int out_channels = 0;
    std::vector<double> w;

    ConvKernel() = default;
    ConvKernel(int in_c, int out_c)
        : in_channels(in_c), out_channels(out_c),
          w(static_cast<std::size_t>(9) * in_c * out_c, 0.0) {}

    double& at(int ky, int kx, int ic, int oc) {
        return w[(static_cast<std::size_t>(ky * 3 + kx) * in_channels + ic) * out_channels + oc];
    }
    double at(int ky, int kx, int ic, int oc) const {
        return w[(static_cast<std::size_t>(ky * 3 + kx) * in_channels + ic) * out_channels + oc];
    }
};

// Same-size 2-D convolution with zero padding:
//   out(y,x,oc) = sum_{ky,kx,ic} in(y+ky-1, x+kx-1, ic) * k(ky,kx,ic,oc)
Tensor conv2d(const Tensor& in, const ConvKernel& k);

// Exact adjoint of conv2d in the Euclidean inner product:
//   <conv2d(x,k), y> == <x, conv2d_transpose(y,k)> for all x, y.
Tensor conv2d_transpose(const Tensor& in, const ConvKernel& k);

// Gradient of <cotangent, conv2d(in, k)> with respect to the kernel weights.
ConvKernel conv2d_weight_grad(const Tensor& in, const Tensor& cotangent);

}  // namespace lda
