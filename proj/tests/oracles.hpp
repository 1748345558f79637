#pragma once

// Reference implementations the library is checked against. Each one is the
// most direct loop for its definition, sharing no code with the library.

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "bireal/conv.hpp"
#include "bireal/tensor.hpp"

namespace oracle {

using bireal::ConvGeometry;
using bireal::Tensor;

/// Direct 7-loop cross-correlation; out-of-range taps read `pad`.
template <class T>
Tensor<T> conv2d(const Tensor<T>& a, const Tensor<T>& w, const ConvGeometry& g, T pad) {
    const std::size_t n_img = a.dim(0), c_in = a.dim(1), h = a.dim(2), wd = a.dim(3);
    const std::size_t ho = (h + 2 * g.padding - g.kernel_h) / g.stride + 1;
    const std::size_t wo = (wd + 2 * g.padding - g.kernel_w) / g.stride + 1;
    Tensor<T> out({n_img, g.out_channels, ho, wo});
    for (std::size_t n = 0; n < n_img; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t y = 0; y < ho; ++y)
                for (std::size_t x = 0; x < wo; ++x) {
                    T acc = 0;
                    for (std::size_t c = 0; c < c_in; ++c)
                        for (std::size_t i = 0; i < g.kernel_h; ++i)
                            for (std::size_t j = 0; j < g.kernel_w; ++j) {
                                const long iy = static_cast<long>(y * g.stride + i) - static_cast<long>(g.padding);
                                const long ix = static_cast<long>(x * g.stride + j) - static_cast<long>(g.padding);
                                const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(h) &&
                                                    ix < static_cast<long>(wd);
                                const T v = inside ? a.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) : pad;
                                acc += v * w.at(o, c, i, j);
                            }
                    out.at(n, o, y, x) = acc;
                }
    return out;
}

/// Agreements between two words, one bit at a time.
inline int popcount_xnor(std::uint64_t a, std::uint64_t b) {
    int n = 0;
    for (int i = 0; i < 64; ++i) n += ((a >> i) & 1u) == ((b >> i) & 1u);
    return n;
}

template <class T>
Tensor<T> random_tensor(bireal::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (auto& v : t.data()) v = static_cast<T>(d(rng));
    return t;
}

/// Random +-1 tensor.
template <class T>
Tensor<T> random_signs(bireal::Shape shape, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = (rng() & 1u) ? T{1} : T{-1};
    return t;
}

/// Central difference of a scalar function of one coordinate of `x`.
template <class T>
double central_difference(Tensor<T>& x, std::size_t i, double h, const std::function<double()>& f) {
    const T saved = x[i];
    x[i] = static_cast<T>(saved + h);
    const double up = f();
    x[i] = static_cast<T>(saved - h);
    const double down = f();
    x[i] = saved;
    return (up - down) / (2 * h);
}

/// Weighted sum sum(g * y), the scalar probe used to check vector-Jacobian products.
template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

}  // namespace oracle
