#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bireal/errors.hpp"

namespace bireal {

/// Tensor extents. Activations are N,C,H,W; conv weights are O,I,Kh,Kw.
using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

/// Dense row-major tensor, last axis fastest.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T{0})
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Element (n, c, h, w) of a rank-4 tensor.
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <class U>
    Tensor<U> cast() const {
        return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using RealTensor = Tensor<float>;

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
    return Tensor<T>(t.shape());
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

/// Elementwise a += b.
template <class T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += bd[i];
}

/// Bit-packed {-1,+1} tensor. Bit 1 encodes +1, bit 0 encodes -1. Element i
/// lives in word i/64 at bit i%64 (LSB first). Trailing bits of the last word
/// are always zero, so word-wise equality is elementwise equality.
class BitTensor {
public:
    static constexpr std::size_t kWordBits = 64;

    BitTensor() = default;
    explicit BitTensor(Shape shape)
        : shape_(std::move(shape)), words_(word_count(shape_numel(shape_)), 0) {}

    /// Adopts an existing word stream; rejects non-canonical trailing bits.
    static BitTensor from_words(Shape shape, std::vector<std::uint64_t> words) {
        BitTensor b;
        b.shape_ = std::move(shape);
        const std::size_t n = shape_numel(b.shape_);
        if (words.size() != word_count(n))
            throw ShapeError("bit tensor of shape " + shape_str(b.shape_) + " needs " +
                             std::to_string(word_count(n)) + " words, got " +
                             std::to_string(words.size()));
        if (n % kWordBits != 0 && (words.back() & ~tail_mask(n)) != 0)
            throw FormatError("bit tensor has non-zero trailing bits");
        b.words_ = std::move(words);
        return b;
    }

    static constexpr std::size_t word_count(std::size_t numel) noexcept {
        return (numel + kWordBits - 1) / kWordBits;
    }

    /// Mask of the valid bits in the final word.
    static constexpr std::uint64_t tail_mask(std::size_t numel) noexcept {
        const std::size_t rem = numel % kWordBits;
        return rem == 0 ? ~std::uint64_t{0} : ((std::uint64_t{1} << rem) - 1);
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return shape_numel(shape_); }
    std::span<const std::uint64_t> words() const noexcept { return words_; }

    bool bit(std::size_t i) const noexcept { return (words_[i / kWordBits] >> (i % kWordBits)) & 1u; }
    void set_bit(std::size_t i, bool value) noexcept {
        const std::uint64_t m = std::uint64_t{1} << (i % kWordBits);
        if (value)
            words_[i / kWordBits] |= m;
        else
            words_[i / kWordBits] &= ~m;
    }

    friend bool operator==(const BitTensor&, const BitTensor&) = default;

private:
    Shape shape_;
    std::vector<std::uint64_t> words_;
};

/// Number of positions where a and b agree.
constexpr int popcount_xnor(std::uint64_t a, std::uint64_t b) noexcept {
    return std::popcount(~(a ^ b));
}

/// sign(x) with sign(0) = +1, packed.
template <class T>
BitTensor sign_pack(const Tensor<T>& x) {
    const auto xd = x.data();
    std::vector<std::uint64_t> words(BitTensor::word_count(xd.size()), 0);
    for (std::size_t i = 0; i < xd.size(); ++i)
        if (xd[i] >= T{0}) words[i / 64] |= std::uint64_t{1} << (i % 64);
    return BitTensor::from_words(x.shape(), std::move(words));
}

template <class T = float>
Tensor<T> unpack(const BitTensor& b) {
    Tensor<T> out(b.shape());
    auto od = out.data();
    for (std::size_t i = 0; i < od.size(); ++i) od[i] = b.bit(i) ? T{1} : T{-1};
    return out;
}

}  // namespace bireal
