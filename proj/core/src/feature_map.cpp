#include "lda/feature_map.hpp"

#include <cstring>
#include <stdexcept>

#include "lda/spectral.hpp"

namespace lda {

namespace {

Tensor blocks_as_tensor(const BlockVectors& b, int h, int w) {
    Tensor t(h, w, b.dim);
    std::memcpy(t.data(), b.v.data(), b.v.size() * sizeof(double));
    return t;
}

BlockVectors tensor_as_blocks(const Tensor& t) {
    BlockVectors b(t.height() * t.width(), t.channels());
    std::memcpy(b.v.data(), t.data(), b.v.size() * sizeof(double));
    return b;
}

std::vector<double> tensor_to_vec(const Tensor& t) {
    return std::vector<double>(t.data(), t.data() + t.size());
}

Tensor vec_to_tensor(const std::vector<double>& v, int h, int w, int c) {
    Tensor t(h, w, c);
    std::memcpy(t.data(), v.data(), v.size() * sizeof(double));
    return t;
}

}  // namespace

double dot(const BlockVectors& a, const BlockVectors& b) {
    if (a.blocks != b.blocks || a.dim != b.dim)
        throw std::invalid_argument("dot(BlockVectors): shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

ConvNetParams ConvNetParams::xavier(int width, Rng& rng) {
    if (width < 1) throw std::invalid_argument("ConvNetParams: width must be >= 1");
    ConvNetParams p;
    p.width = width;
    for (int l = 0; l < 4; ++l) {
        const int in_c = l == 0 ? 1 : width;
        p.layers[l] = ConvKernel(in_c, width);
        const double a = std::sqrt(6.0 / (9.0 * in_c + 9.0 * width));
        for (auto& wv : p.layers[l].w) wv = rng.uniform(-a, a);
    }
    return p;
}

FeatureMap::FeatureMap(MapKind kind, int h, int w, int d)
    : kind_(kind), h_(h), w_(w), m_(h * w), d_(d) {
    if (h < 1 || w < 1) throw std::invalid_argument("FeatureMap: empty image");
}

FeatureMap FeatureMap::identity(int h, int w) { return FeatureMap(MapKind::identity, h, w, 1); }

FeatureMap FeatureMap::finite_difference(int h, int w) {
    return FeatureMap(MapKind::finite_difference, h, w, 2);
}

FeatureMap FeatureMap::conv_net(int h, int w, ConvNetParams params) {
    if (params.width < 1) throw std::invalid_argument("FeatureMap::conv_net: empty net");
    for (int l = 0; l < 4; ++l) {
        const int expect_in = l == 0 ? 1 : params.width;
        if (params.layers[l].in_channels != expect_in ||
            params.layers[l].out_channels != params.width)
            throw std::invalid_argument("FeatureMap::conv_net: layer shape mismatch");
    }
    FeatureMap m(MapKind::conv_net, h, w, params.width);
    m.net_ = std::move(params);
    return m;
}

const ConvNetParams& FeatureMap::params() const {
    if (kind_ != MapKind::conv_net) throw std::invalid_argument("params(): not a conv net");
    return net_;
}
ConvNetParams& FeatureMap::params() {
    if (kind_ != MapKind::conv_net) throw std::invalid_argument("params(): not a conv net");
    return net_;
}

BlockVectors FeatureMap::forward(const Tensor& x) const {
    if (x.height() != h_ || x.width() != w_ || x.channels() != 1)
        throw std::invalid_argument("FeatureMap::forward: image shape mismatch");
    switch (kind_) {
        case MapKind::identity:
            return tensor_as_blocks(x);
        case MapKind::finite_difference: {
            BlockVectors g(m_, 2);
            for (int y = 0; y < h_; ++y)
                for (int xx = 0; xx < w_; ++xx) {
                    double* b = g.block(y * w_ + xx);
                    b[0] = xx + 1 < w_ ? x(y, xx + 1) - x(y, xx) : 0.0;
                    b[1] = y + 1 < h_ ? x(y + 1, xx) - x(y, xx) : 0.0;
                }
            return g;
        }
        case MapKind::conv_net:
            return forward_eval(x).g;
    }
    throw std::logic_error("unreachable");
}

FeatureEval FeatureMap::forward_eval(const Tensor& x) const {
    FeatureEval e;
    if (kind_ != MapKind::conv_net) {
        e.g = forward(x);
        return e;
    }
    if (x.height() != h_ || x.width() != w_ || x.channels() != 1)
        throw std::invalid_argument("FeatureMap::forward_eval: image shape mismatch");
    e.h.reserve(5);
    e.a.reserve(4);
    e.h.push_back(x);
    for (int l = 0; l < 4; ++l) {
        Tensor al = conv2d(e.h.back(), net_.layers[l]);
        Tensor hl(h_, w_, net_.width);
        for (std::size_t i = 0; i < al.size(); ++i) hl[i] = smoothed_relu(al[i], net_.delta);
        e.a.push_back(std::move(al));
        e.h.push_back(std::move(hl));
    }
    e.g = tensor_as_blocks(e.h.back());
    return e;
}

Tensor FeatureMap::vjp(const Tensor& x, const BlockVectors& y) const {
    if (kind_ == MapKind::conv_net) return vjp_from(forward_eval(x), y);
    FeatureEval dummy;
    return vjp_from(dummy, y);
}

Tensor FeatureMap::vjp_from(const FeatureEval& e, const BlockVectors& y) const {
    if (y.blocks != m_ || y.dim != d_)
        throw std::invalid_argument("FeatureMap::vjp: cotangent shape mismatch");
    switch (kind_) {
        case MapKind::identity:
            return blocks_as_tensor(y, h_, w_);
        case MapKind::finite_difference: {
            Tensor out(h_, w_, 1);
            for (int yy = 0; yy < h_; ++yy)
                for (int xx = 0; xx < w_; ++xx) {
                    const double* b = y.block(yy * w_ + xx);
                    if (xx + 1 < w_) {
                        out(yy, xx) -= b[0];
                        out(yy, xx + 1) += b[0];
                    }
                    if (yy + 1 < h_) {
                        out(yy, xx) -= b[1];
                        out(yy + 1, xx) += b[1];
                    }
                }
            return out;
        }
        case MapKind::conv_net: {
            Tensor cot = blocks_as_tensor(y, h_, w_);
            for (int l = 3; l >= 0; --l) {
                for (std::size_t i = 0; i < cot.size(); ++i)
                    cot[i] *= smoothed_relu_d1(e.a[l][i], net_.delta);
                cot = conv2d_transpose(cot, net_.layers[l]);
            }
            return cot;
        }
    }
    throw std::logic_error("unreachable");
}

BlockVectors FeatureMap::jvp(const Tensor& x, const Tensor& t) const {
    if (kind_ == MapKind::conv_net) return jvp_from(forward_eval(x), t);
    FeatureEval dummy;
    return jvp_from(dummy, t);
}

BlockVectors FeatureMap::jvp_from(const FeatureEval& e, const Tensor& t) const {
    if (t.height() != h_ || t.width() != w_ || t.channels() != 1)
        throw std::invalid_argument("FeatureMap::jvp: tangent shape mismatch");
    if (kind_ != MapKind::conv_net) return forward(t);  // linear map
    Tensor tt = t;
    for (int l = 0; l < 4; ++l) {
        tt = conv2d(tt, net_.layers[l]);
        for (std::size_t i = 0; i < tt.size(); ++i)
            tt[i] *= smoothed_relu_d1(e.a[l][i], net_.delta);
    }
    return tensor_as_blocks(tt);
}

std::array<double, 4> FeatureMap::layer_norms(Rng& rng) const {
    std::array<double, 4> norms{};
    for (int l = 0; l < 4; ++l) {
        const ConvKernel& k = net_.layers[l];
        const int n_in = h_ * w_ * k.in_channels;
        auto apply = [&](const std::vector<double>& v) {
            return tensor_to_vec(conv2d(vec_to_tensor(v, h_, w_, k.in_channels), k));
        };
        auto adjoint = [&](const std::vector<double>& v) {
            return tensor_to_vec(conv2d_transpose(vec_to_tensor(v, h_, w_, k.out_channels), k));
        };
        norms[l] = spectral_norm(n_in, apply, adjoint, 500, rng);
    }
    return norms;
}

double FeatureMap::jacobian_norm_bound(Rng& rng) const {
    switch (kind_) {
        case MapKind::identity:
            return 1.0;
        case MapKind::finite_difference: {
            auto apply = [&](const std::vector<double>& v) {
                BlockVectors g = forward(vec_to_tensor(v, h_, w_, 1));
                return g.v;
            };
            auto adjoint = [&](const std::vector<double>& v) {
                BlockVectors y(m_, 2);
                y.v = v;
                FeatureEval dummy;
                return tensor_to_vec(vjp_from(dummy, y));
            };
            return spectral_norm(h_ * w_, apply, adjoint, 500, rng);
        }
        case MapKind::conv_net: {
            // Slopes of the rectifier lie in [0,1], so the Jacobian never
            // exceeds the product of the conv layer operator norms.
            const auto norms = layer_norms(rng);
            return norms[0] * norms[1] * norms[2] * norms[3];
        }
    }
    throw std::logic_error("unreachable");
}

double FeatureMap::jacobian_lipschitz_bound() const {
    if (kind_ != MapKind::conv_net) return 0.0;  // linear maps have constant Jacobians
    Rng rng(0x5EED5EED1234ABCDull);  // pinned so the bound is a pure function of the weights
    const auto norms = layer_norms(rng);
    double c = 0.0, s = 1.0;
    for (int l = 0; l < 4; ++l) {
        c = norms[l] * norms[l] * s * s / (2.0 * net_.delta) + norms[l] * c;
        s *= norms[l];
    }
    return c;
}

}  // namespace lda
