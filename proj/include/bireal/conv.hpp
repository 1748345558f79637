#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "bireal/errors.hpp"
#include "bireal/gemm.hpp"
#include "bireal/tensor.hpp"

namespace bireal {

/// Geometry of a 2-D convolution. Square stride and symmetric padding.
struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1;
    std::size_t kernel_w = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;

    std::size_t fan_in() const noexcept { return in_channels * kernel_h * kernel_w; }

    void validate() const {
        if (kernel_h < 1 || kernel_w < 1) throw ShapeError("kernel extents must be >= 1");
        if (stride < 1) throw ShapeError("stride must be >= 1");
        if (in_channels < 1 || out_channels < 1) throw ShapeError("channel counts must be >= 1");
    }

    std::size_t out_extent(std::size_t in, std::size_t k, const char* axis) const {
        if (in + 2 * padding < k)
            throw ShapeError(std::string("kernel larger than padded input along ") + axis);
        return (in + 2 * padding - k) / stride + 1;
    }
    std::size_t out_h(std::size_t h) const { return out_extent(h, kernel_h, "H"); }
    std::size_t out_w(std::size_t w) const { return out_extent(w, kernel_w, "W"); }

    Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }

    friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

namespace detail {

inline void check_conv_shapes(const Shape& a, const Shape& w, const ConvGeometry& g) {
    g.validate();
    if (a.size() != 4) throw ShapeError("input must be rank 4 (N,C,H,W), got " + shape_str(a));
    if (w.size() != 4) throw ShapeError("weight must be rank 4 (O,I,Kh,Kw), got " + shape_str(w));
    if (a[1] != g.in_channels)
        throw ShapeError("input axis C is " + std::to_string(a[1]) + ", geometry expects " +
                         std::to_string(g.in_channels));
    if (w[0] != g.out_channels)
        throw ShapeError("weight axis O is " + std::to_string(w[0]) + ", geometry expects " +
                         std::to_string(g.out_channels));
    if (w[1] != g.in_channels)
        throw ShapeError("weight axis I is " + std::to_string(w[1]) + ", geometry expects " +
                         std::to_string(g.in_channels));
    if (w[2] != g.kernel_h)
        throw ShapeError("weight axis Kh is " + std::to_string(w[2]) + ", geometry expects " +
                         std::to_string(g.kernel_h));
    if (w[3] != g.kernel_w)
        throw ShapeError("weight axis Kw is " + std::to_string(w[3]) + ", geometry expects " +
                         std::to_string(g.kernel_w));
    g.out_h(a[2]);
    g.out_w(a[3]);
}

/// Unfolds image n of `a` into cols[C*Kh*Kw, Ho*Wo].
template <class T>
void im2col(const Tensor<T>& a, std::size_t n, const ConvGeometry& g, T pad_value,
            std::vector<T>& cols) {
    const std::size_t c_in = a.dim(1), h = a.dim(2), w = a.dim(3);
    const std::size_t ho = g.out_h(h), wo = g.out_w(w);
    cols.resize(g.fan_in() * ho * wo);
    const T* src = a.data().data() + n * c_in * h * w;
    std::size_t row = 0;
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw, ++row) {
                T* dst = cols.data() + row * ho * wo;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                              static_cast<std::ptrdiff_t>(g.padding);
                    for (std::size_t ow = 0; ow < wo; ++ow) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                                  static_cast<std::ptrdiff_t>(g.padding);
                        const bool inside = ih >= 0 && iw >= 0 && ih < static_cast<std::ptrdiff_t>(h) &&
                                            iw < static_cast<std::ptrdiff_t>(w);
                        dst[oh * wo + ow] = inside ? src[(c * h + ih) * w + iw] : pad_value;
                    }
                }
            }
        }
    }
}

/// Folds cols back into image n of `grad`, dropping padded positions.
template <class T>
void col2im_add(const std::vector<T>& cols, std::size_t n, const ConvGeometry& g, Tensor<T>& grad) {
    const std::size_t c_in = grad.dim(1), h = grad.dim(2), w = grad.dim(3);
    const std::size_t ho = g.out_h(h), wo = g.out_w(w);
    T* dst = grad.data().data() + n * c_in * h * w;
    std::size_t row = 0;
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
            for (std::size_t kw = 0; kw < g.kernel_w; ++kw, ++row) {
                const T* src = cols.data() + row * ho * wo;
                for (std::size_t oh = 0; oh < ho; ++oh) {
                    const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                              static_cast<std::ptrdiff_t>(g.padding);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t ow = 0; ow < wo; ++ow) {
                        const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                                  static_cast<std::ptrdiff_t>(g.padding);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                        dst[(c * h + ih) * w + iw] += src[oh * wo + ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// Cross-correlation of a[N,C,H,W] with w[O,C,Kh,Kw]; padded positions read `pad_value`.
template <class T>
Tensor<T> float_conv2d(const Tensor<T>& a, const Tensor<T>& w, const ConvGeometry& g,
                       T pad_value = T{0}) {
    detail::check_conv_shapes(a.shape(), w.shape(), g);
    const std::size_t n_img = a.dim(0);
    const std::size_t ho = g.out_h(a.dim(2)), wo = g.out_w(a.dim(3));
    const std::size_t plane = ho * wo;
    Tensor<T> out({n_img, g.out_channels, ho, wo});
    std::vector<T> cols;
    for (std::size_t n = 0; n < n_img; ++n) {
        detail::im2col(a, n, g, pad_value, cols);
        detail::gemm_nn(g.out_channels, plane, g.fan_in(), w.data().data(), cols.data(),
                        out.data().data() + n * g.out_channels * plane);
    }
    return out;
}

template <class T>
struct ConvGrads {
    Tensor<T> grad_a;
    Tensor<T> grad_w;
};

/// Gradients of float_conv2d. `pad_value` must match the forward pass since
/// padded positions contribute to the weight gradient.
template <class T>
ConvGrads<T> float_conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& a, const Tensor<T>& w,
                                   const ConvGeometry& g, T pad_value = T{0}) {
    detail::check_conv_shapes(a.shape(), w.shape(), g);
    const std::size_t n_img = a.dim(0);
    const std::size_t ho = g.out_h(a.dim(2)), wo = g.out_w(a.dim(3));
    const Shape expected{n_img, g.out_channels, ho, wo};
    if (grad_out.shape() != expected)
        throw ShapeError("grad_out shape " + shape_str(grad_out.shape()) + " does not match output " +
                         shape_str(expected));
    const std::size_t plane = ho * wo;
    ConvGrads<T> grads{Tensor<T>(a.shape()), Tensor<T>(w.shape())};
    std::vector<T> cols;
    std::vector<T> grad_cols;
    for (std::size_t n = 0; n < n_img; ++n) {
        const T* go = grad_out.data().data() + n * g.out_channels * plane;
        detail::im2col(a, n, g, pad_value, cols);
        detail::gemm_nt(g.out_channels, g.fan_in(), plane, go, cols.data(), grads.grad_w.data().data());
        grad_cols.assign(g.fan_in() * plane, T{0});
        detail::gemm_tn(g.fan_in(), plane, g.out_channels, w.data().data(), go, grad_cols.data());
        detail::col2im_add(grad_cols, n, g, grads.grad_a);
    }
    return grads;
}

namespace detail {

/// Repacks each filter of w into its own word-aligned row.
inline std::vector<std::uint64_t> pack_filter_rows(const BitTensor& w, std::size_t fan_in,
                                                   std::size_t row_words) {
    const std::size_t filters = w.shape()[0];
    std::vector<std::uint64_t> rows(filters * row_words, 0);
    for (std::size_t o = 0; o < filters; ++o)
        for (std::size_t k = 0; k < fan_in; ++k)
            if (w.bit(o * fan_in + k)) rows[o * row_words + k / 64] |= std::uint64_t{1} << (k % 64);
    return rows;
}

}  // namespace detail

/// 1-bit convolution via XNOR + popcount. Padded positions act as -1 (bit 0).
/// Each output equals the +-1 dot product over its receptive field, an integer
/// in [-C*Kh*Kw, C*Kh*Kw] with the parity of C*Kh*Kw.
template <class T = float>
Tensor<T> binconv2d(const BitTensor& a, const BitTensor& w, const ConvGeometry& g,
                    unsigned threads = 1) {
    detail::check_conv_shapes(a.shape(), w.shape(), g);
    const std::size_t n_img = a.shape()[0], c_in = a.shape()[1], h = a.shape()[2], wd = a.shape()[3];
    const std::size_t ho = g.out_h(h), wo = g.out_w(wd);
    const std::size_t fan_in = g.fan_in();
    const std::size_t row_words = BitTensor::word_count(fan_in);
    // Trailing zeros in both operands XNOR to ones; subtract them.
    const int pad_bits = static_cast<int>(row_words * 64 - fan_in);
    const auto filters = detail::pack_filter_rows(w, fan_in, row_words);

    Tensor<T> out({n_img, g.out_channels, ho, wo});
    T* out_data = out.data().data();

    auto run_rows = [&](std::size_t row_begin, std::size_t row_end) {
        std::vector<std::uint64_t> patch(row_words);
        for (std::size_t r = row_begin; r < row_end; ++r) {
            const std::size_t n = r / ho, oh = r % ho;
            for (std::size_t ow = 0; ow < wo; ++ow) {
                std::fill(patch.begin(), patch.end(), 0);
                std::size_t k = 0;
                for (std::size_t c = 0; c < c_in; ++c) {
                    for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                                  static_cast<std::ptrdiff_t>(g.padding);
                        for (std::size_t kw = 0; kw < g.kernel_w; ++kw, ++k) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                                      static_cast<std::ptrdiff_t>(g.padding);
                            if (ih < 0 || iw < 0 || ih >= static_cast<std::ptrdiff_t>(h) ||
                                iw >= static_cast<std::ptrdiff_t>(wd))
                                continue;
                            if (a.bit(((n * c_in + c) * h + ih) * wd + iw))
                                patch[k / 64] |= std::uint64_t{1} << (k % 64);
                        }
                    }
                }
                for (std::size_t o = 0; o < g.out_channels; ++o) {
                    const std::uint64_t* f = filters.data() + o * row_words;
                    std::int32_t matches = -pad_bits;
                    for (std::size_t q = 0; q < row_words; ++q) matches += popcount_xnor(patch[q], f[q]);
                    const std::int32_t dot = 2 * matches - static_cast<std::int32_t>(fan_in);
                    out_data[((n * g.out_channels + o) * ho + oh) * wo + ow] = static_cast<T>(dot);
                }
            }
        }
    };

    const std::size_t total_rows = n_img * ho;
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, total_rows));
    if (workers == 1) {
        run_rows(0, total_rows);
    } else {
        std::vector<std::jthread> pool;
        const std::size_t chunk = (total_rows + workers - 1) / workers;
        for (std::size_t t = 0; t < workers; ++t) {
            const std::size_t b = t * chunk, e = std::min(total_rows, b + chunk);
            if (b < e) pool.emplace_back(run_rows, b, e);
        }
    }
    return out;
}

}  // namespace bireal
