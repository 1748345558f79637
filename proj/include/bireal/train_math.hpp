#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "bireal/errors.hpp"
#include "bireal/tensor.hpp"

namespace bireal {

/// Differentiable stand-in for sign() used on the backward pass.
enum class SurrogateKind {
    ClipSTE,        ///< clip(-1, x, 1); derivative is the 0/1 step on [-1, 1)
    PiecewisePoly,  ///< 2x + x^2 / 2x - x^2 on [-1, 1); derivative is a triangle peaking at 0
};

/// Where the weight scale of the magnitude-aware binarization is pooled.
enum class ScaleScope { PerKernel, PerLayer };

// Derivatives at kink points take the right-limit branch, so every gate and
// piece below is half-open [lo, hi).

template <class T>
constexpr T sign_value(T x) noexcept {
    return x >= T{0} ? T{1} : T{-1};
}

template <class T>
constexpr bool in_unit_band(T x) noexcept {
    return x >= T{-1} && x < T{1};
}

template <class T>
constexpr T poly_value(T x) noexcept {
    if (x < T{-1}) return T{-1};
    if (x < T{0}) return T{2} * x + x * x;
    if (x < T{1}) return T{2} * x - x * x;
    return T{1};
}

template <class T>
constexpr T poly_derivative(T x) noexcept {
    if (x < T{-1}) return T{0};
    if (x < T{0}) return T{2} + T{2} * x;
    if (x < T{1}) return T{2} - T{2} * x;
    return T{0};
}

template <class T>
constexpr T clip_value(T x) noexcept {
    return x < T{-1} ? T{-1} : (x > T{1} ? T{1} : x);
}

namespace detail {

template <class T, class F>
Tensor<T> map(const Tensor<T>& x, F f) {
    Tensor<T> out(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
    return out;
}

/// grad_out scaled elementwise by f(a).
template <class T, class F>
Tensor<T> gate(const Tensor<T>& a, const Tensor<T>& grad_out, F f, const char* what) {
    require_same_shape(a, grad_out, what);
    Tensor<T> out(a.shape());
    auto ad = a.data();
    auto gd = grad_out.data();
    auto od = out.data();
    for (std::size_t i = 0; i < ad.size(); ++i) od[i] = gd[i] * f(ad[i]);
    return out;
}

}  // namespace detail

/// Real-valued sign: +1 for x >= 0, -1 otherwise.
template <class T>
Tensor<T> sign_forward(const Tensor<T>& x) {
    return detail::map(x, [](T v) { return sign_value(v); });
}

template <class T>
Tensor<T> poly_forward(const Tensor<T>& a) {
    return detail::map(a, [](T v) { return poly_value(v); });
}

template <class T>
Tensor<T> poly_backward(const Tensor<T>& a, const Tensor<T>& grad_out) {
    return detail::gate(a, grad_out, [](T v) { return poly_derivative(v); }, "poly_backward");
}

template <class T>
Tensor<T> clip_ste_backward(const Tensor<T>& a, const Tensor<T>& grad_out) {
    return detail::gate(a, grad_out, [](T v) { return in_unit_band(v) ? T{1} : T{0}; },
                        "clip_ste_backward");
}

/// Backward of sign() through the chosen surrogate.
template <class T>
Tensor<T> surrogate_backward(SurrogateKind kind, const Tensor<T>& a, const Tensor<T>& grad_out) {
    return kind == SurrogateKind::PiecewisePoly ? poly_backward(a, grad_out) : clip_ste_backward(a, grad_out);
}

template <class T>
Tensor<T> clip_activation_forward(const Tensor<T>& a) {
    return detail::map(a, [](T v) { return clip_value(v); });
}

template <class T>
Tensor<T> clip_activation_backward(const Tensor<T>& a, const Tensor<T>& grad_out) {
    return clip_ste_backward(a, grad_out);
}

template <class T>
Tensor<T> relu_forward(const Tensor<T>& a) {
    return detail::map(a, [](T v) { return v > T{0} ? v : T{0}; });
}

template <class T>
Tensor<T> relu_backward(const Tensor<T>& a, const Tensor<T>& grad_out) {
    return detail::gate(a, grad_out, [](T v) { return v >= T{0} ? T{1} : T{0}; }, "relu_backward");
}

/// Integral of |F(x) - sign(x)| over [lo, hi] by composite Simpson on each
/// side of the jump at 0.
inline double approximation_area(SurrogateKind kind, double lo = -1.0, double hi = 1.0,
                                 std::size_t intervals = 2000) {
    auto f = [kind](double x, double s) {
        const double v = kind == SurrogateKind::PiecewisePoly ? poly_value(x) : clip_value(x);
        return std::abs(v - s);
    };
    auto simpson = [&](double a, double b, double s) {
        if (b <= a) return 0.0;
        const std::size_t n = intervals + (intervals % 2);
        const double h = (b - a) / static_cast<double>(n);
        double acc = f(a, s) + f(b, s);
        for (std::size_t i = 1; i < n; ++i) acc += f(a + h * static_cast<double>(i), s) * (i % 2 ? 4.0 : 2.0);
        return acc * h / 3.0;
    };
    if (hi <= 0.0) return simpson(lo, hi, -1.0);
    if (lo >= 0.0) return simpson(lo, hi, 1.0);
    return simpson(lo, 0.0, -1.0) + simpson(0.0, hi, 1.0);
}

/// Mean absolute value of each output kernel (or one shared value for the
/// whole layer), i.e. ||W||_1 / |W| over the pooled entries.
template <class T>
std::vector<T> kernel_scales(const Tensor<T>& w, ScaleScope scope = ScaleScope::PerKernel) {
    if (w.rank() < 1 || w.dim(0) == 0) throw ShapeError("weight tensor needs a leading kernel axis");
    const std::size_t kernels = w.dim(0);
    const std::size_t per = w.numel() / kernels;
    auto wd = w.data();
    std::vector<T> scales(kernels, T{0});
    if (scope == ScaleScope::PerLayer) {
        T acc{0};
        for (T v : wd) acc += std::abs(v);
        const T s = w.numel() ? acc / static_cast<T>(w.numel()) : T{0};
        std::fill(scales.begin(), scales.end(), s);
        return scales;
    }
    for (std::size_t o = 0; o < kernels; ++o) {
        T acc{0};
        for (std::size_t i = 0; i < per; ++i) acc += std::abs(wd[o * per + i]);
        scales[o] = per ? acc / static_cast<T>(per) : T{0};
    }
    return scales;
}

/// scale_o * sign(w[o, ...]) with scale_o the mean |w| of kernel o.
template <class T>
Tensor<T> magnitude_aware_binarize(const Tensor<T>& w_r, ScaleScope scope = ScaleScope::PerKernel) {
    const auto scales = kernel_scales(w_r, scope);
    const std::size_t per = w_r.numel() / w_r.dim(0);
    Tensor<T> out(w_r.shape());
    auto wd = w_r.data();
    auto od = out.data();
    for (std::size_t i = 0; i < wd.size(); ++i) od[i] = scales[i / per] * sign_value(wd[i]);
    return out;
}

/// Straight-through gradient: d(scaled sign)/dW_r ~ 1 on [-1, 1).
template <class T>
Tensor<T> magnitude_aware_backward(const Tensor<T>& w_r, const Tensor<T>& grad_wbar) {
    return clip_ste_backward(w_r, grad_wbar);
}

/// Fully differentiable weight surrogate: scale_o * F(w) with F the piecewise
/// polynomial. Used where the whole network must be smooth (gradient checks).
template <class T>
Tensor<T> scaled_poly_weights(const Tensor<T>& w_r, ScaleScope scope = ScaleScope::PerKernel) {
    const auto scales = kernel_scales(w_r, scope);
    const std::size_t per = w_r.numel() / w_r.dim(0);
    Tensor<T> out(w_r.shape());
    auto wd = w_r.data();
    auto od = out.data();
    for (std::size_t i = 0; i < wd.size(); ++i) od[i] = scales[i / per] * poly_value(wd[i]);
    return out;
}

/// Exact chain rule through scaled_poly_weights, including the scale's
/// dependence on every entry of its pool.
template <class T>
Tensor<T> scaled_poly_weights_backward(const Tensor<T>& w_r, const Tensor<T>& grad_wbar,
                                       ScaleScope scope = ScaleScope::PerKernel) {
    require_same_shape(w_r, grad_wbar, "scaled_poly_weights_backward");
    const auto scales = kernel_scales(w_r, scope);
    const std::size_t kernels = w_r.dim(0);
    const std::size_t per = w_r.numel() / kernels;
    auto wd = w_r.data();
    auto gd = grad_wbar.data();
    // dL/dscale for each pool
    std::vector<T> grad_scale(kernels, T{0});
    for (std::size_t i = 0; i < wd.size(); ++i) grad_scale[i / per] += gd[i] * poly_value(wd[i]);
    if (scope == ScaleScope::PerLayer) {
        T total{0};
        for (T v : grad_scale) total += v;
        std::fill(grad_scale.begin(), grad_scale.end(), total);
    }
    const T pool = static_cast<T>(scope == ScaleScope::PerLayer ? w_r.numel() : per);
    Tensor<T> out(w_r.shape());
    auto od = out.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
        const std::size_t o = i / per;
        od[i] = gd[i] * scales[o] * poly_derivative(wd[i]) + grad_scale[o] * sign_value(wd[i]) / pool;
    }
    return out;
}

// ---------------------------------------------------------------------------
// BatchNorm over the channel axis of N,C,H,W tensors.

enum class BnMode { Train, Eval };

template <class T>
struct BatchNormParams {
    Tensor<T> gamma, beta, running_mean, running_var;
    T eps = T(1e-5);
    T momentum = T(0.1);

    BatchNormParams() = default;
    explicit BatchNormParams(std::size_t channels, T eps_ = T(1e-5), T momentum_ = T(0.1))
        : gamma({channels}, T{1}),
          beta({channels}, T{0}),
          running_mean({channels}, T{0}),
          running_var({channels}, T{1}),
          eps(eps_),
          momentum(momentum_) {}

    std::size_t channels() const noexcept { return gamma.numel(); }

    friend bool operator==(const BatchNormParams&, const BatchNormParams&) = default;
};

template <class T>
struct BatchNormCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
    BnMode mode = BnMode::Eval;
};

template <class T>
struct BatchNormGrads {
    Tensor<T> grad_x, grad_gamma, grad_beta;
};

namespace detail {

template <class T>
Tensor<T> batchnorm_apply(const Tensor<T>& x, const BatchNormParams<T>& bn, BnMode mode,
                          BatchNormCache<T>* cache, BatchNormParams<T>* stats) {
    if (x.rank() != 4) throw ShapeError("batchnorm expects N,C,H,W input, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (c != bn.channels())
        throw ShapeError("batchnorm channel count " + std::to_string(c) + " vs parameters " +
                         std::to_string(bn.channels()));
    const std::size_t count = n * plane;
    auto xd = x.data();
    std::vector<T> mean(c), inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        if (mode == BnMode::Train) {
            T sum{0};
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < plane; ++p) sum += xd[(i * c + ch) * plane + p];
            const T mu = sum / static_cast<T>(count);
            T sq{0};
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t p = 0; p < plane; ++p) {
                    const T d = xd[(i * c + ch) * plane + p] - mu;
                    sq += d * d;
                }
            const T var = sq / static_cast<T>(count);
            mean[ch] = mu;
            inv_std[ch] = T{1} / std::sqrt(var + bn.eps);
            if (stats) {
                const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
                stats->running_mean[ch] = (T{1} - bn.momentum) * stats->running_mean[ch] + bn.momentum * mu;
                stats->running_var[ch] = (T{1} - bn.momentum) * stats->running_var[ch] + bn.momentum * unbiased;
            }
        } else {
            mean[ch] = bn.running_mean[ch];
            inv_std[ch] = T{1} / std::sqrt(bn.running_var[ch] + bn.eps);
        }
    }
    Tensor<T> out(x.shape());
    Tensor<T> xhat(cache ? x.shape() : Shape{});
    auto od = out.data();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t idx = (i * c + ch) * plane + p;
                const T xh = (xd[idx] - mean[ch]) * inv_std[ch];
                if (cache) xhat[idx] = xh;
                od[idx] = bn.gamma[ch] * xh + bn.beta[ch];
            }
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
        cache->mode = mode;
    }
    return out;
}

}  // namespace detail

/// Train mode normalizes by batch statistics and folds them into the running
/// statistics; eval mode uses the running statistics.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, BatchNormParams<T>& bn, BnMode mode,
                            BatchNormCache<T>* cache = nullptr) {
    return detail::batchnorm_apply(x, bn, mode, cache, &bn);
}

/// Eval-mode forward on read-only parameters.
template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const BatchNormParams<T>& bn,
                            BatchNormCache<T>* cache = nullptr) {
    return detail::batchnorm_apply(x, bn, BnMode::Eval, cache, static_cast<BatchNormParams<T>*>(nullptr));
}

template <class T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormParams<T>& bn,
                                     const BatchNormCache<T>& cache) {
    require_same_shape(grad_out, cache.xhat, "batchnorm_backward");
    const std::size_t n = grad_out.dim(0), c = grad_out.dim(1), plane = grad_out.dim(2) * grad_out.dim(3);
    const T count = static_cast<T>(n * plane);
    BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>({c}), Tensor<T>({c})};
    auto gd = grad_out.data();
    auto xh = cache.xhat.data();
    auto gx = g.grad_x.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_g{0}, sum_gx{0};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t idx = (i * c + ch) * plane + p;
                sum_g += gd[idx];
                sum_gx += gd[idx] * xh[idx];
            }
        g.grad_gamma[ch] = sum_gx;
        g.grad_beta[ch] = sum_g;
        const T scale = bn.gamma[ch] * cache.inv_std[ch];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t idx = (i * c + ch) * plane + p;
                if (cache.mode == BnMode::Train)
                    gx[idx] = scale * (gd[idx] - sum_g / count - xh[idx] * sum_gx / count);
                else
                    gx[idx] = scale * gd[idx];
            }
    }
    return g;
}

// ---------------------------------------------------------------------------
// SGD with momentum: v <- mu * v + (g + wd * p); p <- p - lr * v

template <class T>
struct SgdHyper {
    T learning_rate = T(0.01);
    T momentum = T(0.9);
    T weight_decay = T(0);
};

template <class T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, const SgdHyper<T>& h) {
    require_same_shape(param, grad, "sgd_step grad");
    require_same_shape(param, velocity, "sgd_step velocity");
    auto p = param.data();
    auto g = grad.data();
    auto v = velocity.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = h.momentum * v[i] + g[i] + h.weight_decay * p[i];
        p[i] -= h.learning_rate * v[i];
    }
}

}  // namespace bireal
