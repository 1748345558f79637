#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bireal/errors.hpp"
#include "bireal/tensor.hpp"

namespace bireal {

/// Labelled images [N,C,H,W] with labels < num_classes.
struct Dataset {
    RealTensor images;
    std::vector<std::uint32_t> labels;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t channels() const { return images.dim(1); }
    std::size_t height() const { return images.dim(2); }
    std::size_t width() const { return images.dim(3); }

    void validate() const {
        if (images.rank() != 4) throw FormatError("dataset images must be N,C,H,W");
        if (images.dim(0) != labels.size())
            throw FormatError("image count " + std::to_string(images.dim(0)) + " does not match label count " +
                              std::to_string(labels.size()));
        for (auto l : labels)
            if (l >= num_classes) throw FormatError("label " + std::to_string(l) + " out of range");
    }

    /// Gathers the samples at `indices` into a batch.
    RealTensor gather(std::span<const std::size_t> indices, std::vector<std::uint32_t>& batch_labels) const {
        const std::size_t per = images.numel() / std::max<std::size_t>(1, size());
        RealTensor out({indices.size(), channels(), height(), width()});
        batch_labels.resize(indices.size());
        for (std::size_t i = 0; i < indices.size(); ++i) {
            std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                        out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
            batch_labels[i] = labels[indices[i]];
        }
        return out;
    }

    Dataset slice(std::size_t begin, std::size_t end) const {
        std::vector<std::size_t> idx(end - begin);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
        Dataset d;
        d.images = gather(idx, d.labels);
        d.num_classes = num_classes;
        return d;
    }
};

/// Deterministic holdout: the first (1 - val_fraction) samples train, the rest
/// validate. With a seed, samples are first permuted by that seed.
inline std::pair<Dataset, Dataset> split_holdout(const Dataset& d, double val_fraction,
                                                 std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
    if (val_fraction < 0.0 || val_fraction >= 1.0) throw Error("validation fraction must be in [0, 1)");
    const auto n_val = static_cast<std::size_t>(static_cast<double>(d.size()) * val_fraction);
    const std::size_t n_train = d.size() - n_val;
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle_seed) {
        // Fisher-Yates with raw engine draws so the permutation is portable
        std::mt19937_64 rng(*shuffle_seed);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    }
    std::pair<Dataset, Dataset> out;
    out.first.num_classes = out.second.num_classes = d.num_classes;
    out.first.images = d.gather(std::span(order).first(n_train), out.first.labels);
    out.second.images = d.gather(std::span(order).subspan(n_train), out.second.labels);
    return out;
}

// ---------------------------------------------------------------------------
// IDX files

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading '" + path + "'");
    return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
    if (off + 4 > b.size()) throw FormatError("IDX header truncated");
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Parses an IDX image file (N x H x W unsigned bytes) and label file.
/// Pixels are scaled to [0, 1]; the result has one channel.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto img = detail::read_file(images_path);
    const auto lbl = detail::read_file(labels_path);
    const auto img_magic = detail::read_be32(img, 0);
    if (img_magic != kIdxImagesMagic)
        throw FormatError("bad IDX image magic in '" + images_path + "'");
    if (detail::read_be32(lbl, 0) != kIdxLabelsMagic) throw FormatError("bad IDX label magic in '" + labels_path + "'");
    const std::uint64_t n = detail::read_be32(img, 4), h = detail::read_be32(img, 8), w = detail::read_be32(img, 12);
    const std::uint64_t n_labels = detail::read_be32(lbl, 4);
    if (n != n_labels)
        throw FormatError("IDX image count " + std::to_string(n) + " vs label count " + std::to_string(n_labels));
    if (h == 0 || w == 0 || n > std::numeric_limits<std::uint32_t>::max() / std::max<std::uint64_t>(1, h * w))
        throw FormatError("IDX dimensions overflow");
    if (img.size() != 16 + n * h * w) throw FormatError("IDX image payload size does not match header");
    if (lbl.size() != 8 + n) throw FormatError("IDX label payload size does not match header");

    Dataset d;
    d.images = RealTensor({n, 1, h, w});
    for (std::size_t i = 0; i < n * h * w; ++i) d.images[i] = static_cast<float>(img[16 + i]) / 255.0f;
    d.labels.resize(n);
    std::uint32_t max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        d.labels[i] = lbl[8 + i];
        max_label = std::max(max_label, d.labels[i]);
    }
    d.num_classes = n ? max_label + 1 : 0;
    return d;
}

/// Writes images (values in [0,1], single channel) and labels as IDX files.
inline void save_idx(const Dataset& d, const std::string& images_path, const std::string& labels_path) {
    auto be32 = [](std::ofstream& o, std::uint32_t v) {
        const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                           static_cast<char>(v)};
        o.write(b, 4);
    };
    std::ofstream img(images_path, std::ios::binary), lbl(labels_path, std::ios::binary);
    if (!img || !lbl) throw IoError("cannot create IDX files");
    be32(img, kIdxImagesMagic);
    be32(img, static_cast<std::uint32_t>(d.size()));
    be32(img, static_cast<std::uint32_t>(d.height()));
    be32(img, static_cast<std::uint32_t>(d.width()));
    for (float v : d.images.data())
        img.put(static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f)));
    be32(lbl, kIdxLabelsMagic);
    be32(lbl, static_cast<std::uint32_t>(d.size()));
    for (auto l : d.labels) lbl.put(static_cast<char>(l));
    if (!img || !lbl) throw IoError("error writing IDX files");
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian blobs

struct BlobsConfig {
    std::size_t classes = 4;
    std::size_t size = 8;  ///< image side
    std::size_t per_class = 100;
    double spread = 0.5;
    std::uint64_t seed = 1;
};

/// One random prototype image per class plus isotropic Gaussian noise.
/// Samples cycle through the classes so any prefix is balanced.
inline Dataset synthetic_blobs(const BlobsConfig& cfg) {
    if (cfg.classes == 0 || cfg.size == 0) throw Error("synthetic blobs need classes and size > 0");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t pixels = cfg.size * cfg.size;
    std::vector<double> prototypes(cfg.classes * pixels);
    for (auto& v : prototypes) v = normal(rng);
    const std::size_t n = cfg.classes * cfg.per_class;
    Dataset d;
    d.num_classes = cfg.classes;
    d.images = RealTensor({n, 1, cfg.size, cfg.size});
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % cfg.classes;
        d.labels[i] = static_cast<std::uint32_t>(c);
        for (std::size_t p = 0; p < pixels; ++p)
            d.images[i * pixels + p] = static_cast<float>(prototypes[c * pixels + p] + cfg.spread * normal(rng));
    }
    return d;
}

}  // namespace bireal
