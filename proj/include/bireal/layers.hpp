#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

#include "bireal/conv.hpp"
#include "bireal/tensor.hpp"

// Real-valued plumbing layers around the binary blocks: pooling, the
// classifier, and the softmax cross-entropy loss.

namespace bireal {

template <class T>
struct MaxPoolResult {
    Tensor<T> out;
    std::vector<std::size_t> argmax;  ///< flat input index per output element
};

/// Max pooling with implicit -inf padding.
template <class T>
MaxPoolResult<T> maxpool_forward(const Tensor<T>& x, const ConvGeometry& g) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = g.out_h(h), wo = g.out_w(w);
    MaxPoolResult<T> r{Tensor<T>({n, c, ho, wo}), std::vector<std::size_t>(n * c * ho * wo)};
    std::size_t o = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t oh = 0; oh < ho; ++oh)
                for (std::size_t ow = 0; ow < wo; ++ow, ++o) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
                        for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                            const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                                      static_cast<std::ptrdiff_t>(g.padding);
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                                      static_cast<std::ptrdiff_t>(g.padding);
                            if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(h) ||
                                iw >= static_cast<std::ptrdiff_t>(w))
                                continue;
                            const std::size_t idx = ((i * c + ch) * h + ih) * w + iw;
                            if (x[idx] > best) {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    r.out[o] = best;
                    r.argmax[o] = best_idx;
                }
    return r;
}

template <class T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                           const Shape& input_shape) {
    Tensor<T> g(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += grad_out[o];
    return g;
}

/// Mean over H,W: [N,C,H,W] -> [N,C].
template <class T>
Tensor<T> global_avgpool_forward(const Tensor<T>& x) {
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    Tensor<T> out({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        T acc{0};
        for (std::size_t p = 0; p < plane; ++p) acc += x[i * plane + p];
        out[i] = acc / static_cast<T>(plane);
    }
    return out;
}

template <class T>
Tensor<T> global_avgpool_backward(const Tensor<T>& grad_out, const Shape& input_shape) {
    const std::size_t plane = input_shape[2] * input_shape[3];
    Tensor<T> g(input_shape);
    for (std::size_t i = 0; i < grad_out.numel(); ++i)
        for (std::size_t p = 0; p < plane; ++p) g[i * plane + p] = grad_out[i] / static_cast<T>(plane);
    return g;
}

/// y[N,K] = x[N,C] * W[K,C]^T + b
template <class T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    const std::size_t n = x.dim(0), c = x.dim(1), k = weight.dim(0);
    if (weight.dim(1) != c) throw ShapeError("linear layer input features mismatch");
    Tensor<T> y({n, k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) y[i * k + j] = bias[j];
    detail::gemm_nt(n, k, c, x.data().data(), weight.data().data(), y.data().data());
    return y;
}

template <class T>
struct LinearGrads {
    Tensor<T> grad_x, grad_w, grad_b;
};

template <class T>
LinearGrads<T> linear_backward(const Tensor<T>& grad_y, const Tensor<T>& x, const Tensor<T>& weight) {
    const std::size_t n = x.dim(0), c = x.dim(1), k = weight.dim(0);
    LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), Tensor<T>({k})};
    detail::gemm_nn(n, c, k, grad_y.data().data(), weight.data().data(), g.grad_x.data().data());
    detail::gemm_tn(k, c, n, grad_y.data().data(), x.data().data(), g.grad_w.data().data());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) g.grad_b[j] += grad_y[i * k + j];
    return g;
}

template <class T>
struct LossResult {
    T loss{0};
    Tensor<T> grad_logits;
    std::size_t correct = 0;
};

/// Mean softmax cross-entropy over the batch.
template <class T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::uint32_t>& labels) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n) throw ShapeError("label count does not match batch size");
    LossResult<T> r{T{0}, Tensor<T>(logits.shape()), 0};
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data().data() + i * k;
        const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + k) - row);
        if (arg == labels[i]) ++r.correct;
        const T mx = row[arg];
        T z{0};
        for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const T log_z = std::log(z) + mx;
        r.loss += log_z - row[labels[i]];
        for (std::size_t j = 0; j < k; ++j) {
            const T p = std::exp(row[j] - log_z);
            r.grad_logits[i * k + j] = (p - (j == labels[i] ? T{1} : T{0})) / static_cast<T>(n);
        }
    }
    r.loss /= static_cast<T>(n);
    return r;
}

}  // namespace bireal
