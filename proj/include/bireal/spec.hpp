#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bireal/conv.hpp"
#include "bireal/errors.hpp"

namespace bireal {

/// Shortcut topology of the binarized blocks.
enum class BlockVariant {
    BiReal,       ///< one binary conv per block, identity shortcut around it
    ResNetStyle,  ///< two binary convs per block, shortcut around both
    Plain,        ///< no shortcut
};

/// Binary: block convs are 1-bit. Full: the full-precision twin.
enum class Precision { Binary, Full };

inline std::string to_string(BlockVariant v) {
    switch (v) {
        case BlockVariant::BiReal: return "bireal";
        case BlockVariant::ResNetStyle: return "resnet";
        case BlockVariant::Plain: return "plain";
    }
    return "?";
}

inline BlockVariant parse_variant(const std::string& s) {
    if (s == "bireal") return BlockVariant::BiReal;
    if (s == "resnet") return BlockVariant::ResNetStyle;
    if (s == "plain") return BlockVariant::Plain;
    throw SpecError("unknown block variant '" + s + "' (expected bireal, resnet or plain)");
}

struct StemSpec {
    std::size_t channels = 16;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;
    bool maxpool = false;  ///< 3x3, stride 2, padding 1

    friend bool operator==(const StemSpec&, const StemSpec&) = default;
};

/// A run of binary 3x3 convs at one width. The first conv applies `stride`.
struct StageSpec {
    std::size_t channels = 16;
    std::size_t convs = 2;
    std::size_t stride = 1;

    friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct BlockSpec {
    BlockVariant variant = BlockVariant::BiReal;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t stride = 1;
    std::size_t convs = 1;
    bool shortcut = true;
    std::optional<ConvGeometry> downsample;  ///< real 1x1 conv when the shortcut changes shape
};

struct NetworkSpec {
    std::string name = "custom";
    BlockVariant variant = BlockVariant::BiReal;
    Precision precision = Precision::Binary;
    std::size_t input_channels = 1;
    std::size_t input_height = 8;
    std::size_t input_width = 8;
    std::size_t num_classes = 10;
    StemSpec stem;
    std::vector<StageSpec> stages;
    double bn_eps = 1e-5;
    double bn_momentum = 0.1;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;

    NetworkSpec with_variant(BlockVariant v) const {
        NetworkSpec s = *this;
        s.variant = v;
        return s;
    }
    NetworkSpec with_precision(Precision p) const {
        NetworkSpec s = *this;
        s.precision = p;
        return s;
    }
    NetworkSpec with_input_size(std::size_t h, std::size_t w) const {
        NetworkSpec s = *this;
        s.input_height = h;
        s.input_width = w;
        return s;
    }

    /// Expands stages into blocks for the configured variant.
    std::vector<BlockSpec> blocks() const {
        std::vector<BlockSpec> out;
        std::size_t in = stem.channels;
        for (const auto& st : stages) {
            const std::size_t per_block = variant == BlockVariant::ResNetStyle ? 2 : 1;
            if (st.convs % per_block != 0)
                throw SpecError("resnet-style stages need an even number of convs, got " +
                                std::to_string(st.convs));
            for (std::size_t b = 0; b < st.convs / per_block; ++b) {
                BlockSpec bs;
                bs.variant = variant;
                bs.in_channels = in;
                bs.out_channels = st.channels;
                bs.stride = b == 0 ? st.stride : 1;
                bs.convs = per_block;
                bs.shortcut = variant != BlockVariant::Plain;
                if (bs.shortcut && (bs.stride != 1 || bs.in_channels != bs.out_channels))
                    bs.downsample = ConvGeometry{bs.in_channels, bs.out_channels, 1, 1, bs.stride, 0};
                out.push_back(bs);
                in = st.channels;
            }
        }
        return out;
    }
};

enum class LayerKind { Conv, BatchNorm, MaxPool, AvgPool, FullyConnected };

/// One layer of the expanded network with its input/output extents (C,H,W).
struct LayerInfo {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    bool binary = false;  ///< 1-bit weights and activations
    ConvGeometry geom;    ///< conv layers; FC uses in/out channels only
    std::size_t in_c = 0, in_h = 0, in_w = 0;
    std::size_t out_c = 0, out_h = 0, out_w = 0;

    std::size_t weight_count() const {
        if (kind == LayerKind::Conv) return geom.out_channels * geom.fan_in();
        if (kind == LayerKind::FullyConnected) return geom.out_channels * geom.in_channels;
        return 0;
    }
    std::size_t output_elems() const { return out_c * out_h * out_w; }
};

inline ConvGeometry stem_geometry(const NetworkSpec& s) {
    return {s.input_channels, s.stem.channels, s.stem.kernel, s.stem.kernel, s.stem.stride, s.stem.padding};
}

inline ConvGeometry block_conv_geometry(std::size_t in, std::size_t out, std::size_t stride) {
    return {in, out, 3, 3, stride, 1};
}

inline constexpr ConvGeometry kMaxPoolGeometry{1, 1, 3, 3, 2, 1};

/// Validates the spec and lists every layer in execution order.
inline std::vector<LayerInfo> expand_layers(const NetworkSpec& s) {
    if (s.input_channels == 0 || s.input_height == 0 || s.input_width == 0)
        throw SpecError("input extents must be positive");
    if (s.num_classes == 0) throw SpecError("num_classes must be positive");
    if (s.stem.channels == 0) throw SpecError("stem channels must be positive");
    if (s.stages.empty()) throw SpecError("network needs at least one stage");
    for (const auto& st : s.stages) {
        if (st.channels == 0) throw SpecError("stage channels must be positive");
        if (st.convs == 0) throw SpecError("stage conv count must be positive");
        if (st.stride == 0) throw SpecError("stage stride must be positive");
    }
    if (s.stem.kernel == 0 || s.stem.stride == 0) throw SpecError("stem kernel and stride must be positive");

    std::vector<LayerInfo> layers;
    std::size_t c = s.input_channels, h = s.input_height, w = s.input_width;
    auto add_conv = [&](std::string name, const ConvGeometry& g, bool binary, std::size_t ic,
                        std::size_t ih, std::size_t iw) {
        LayerInfo l;
        l.name = std::move(name);
        l.kind = LayerKind::Conv;
        l.binary = binary;
        l.geom = g;
        l.in_c = ic;
        l.in_h = ih;
        l.in_w = iw;
        try {
            l.out_h = g.out_h(ih);
            l.out_w = g.out_w(iw);
        } catch (const ShapeError& e) {
            throw SpecError("impossible stride chain at " + l.name + ": " + e.what());
        }
        l.out_c = g.out_channels;
        layers.push_back(l);
        return l;
    };
    auto add_bn = [&](std::string name, const LayerInfo& after) {
        LayerInfo l;
        l.name = std::move(name);
        l.kind = LayerKind::BatchNorm;
        l.in_c = l.out_c = after.out_c;
        l.in_h = l.out_h = after.out_h;
        l.in_w = l.out_w = after.out_w;
        layers.push_back(l);
    };

    const bool binary = s.precision == Precision::Binary;
    auto stem = add_conv("stem.conv", stem_geometry(s), false, c, h, w);
    add_bn("stem.bn", stem);
    c = stem.out_c;
    h = stem.out_h;
    w = stem.out_w;
    if (s.stem.maxpool) {
        LayerInfo p;
        p.name = "stem.pool";
        p.kind = LayerKind::MaxPool;
        p.geom = kMaxPoolGeometry;
        p.in_c = p.out_c = c;
        p.in_h = h;
        p.in_w = w;
        try {
            p.out_h = p.geom.out_h(h);
            p.out_w = p.geom.out_w(w);
        } catch (const ShapeError& e) {
            throw SpecError(std::string("impossible stride chain at stem.pool: ") + e.what());
        }
        layers.push_back(p);
        h = p.out_h;
        w = p.out_w;
    }

    const auto blocks = s.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& bs = blocks[b];
        const std::string prefix = "block" + std::to_string(b);
        const std::size_t bc = c, bh = h, bw = w;
        for (std::size_t k = 0; k < bs.convs; ++k) {
            const std::size_t in = k == 0 ? bs.in_channels : bs.out_channels;
            const std::size_t stride = k == 0 ? bs.stride : 1;
            auto conv = add_conv(prefix + ".conv" + std::to_string(k), block_conv_geometry(in, bs.out_channels, stride),
                                 binary, c, h, w);
            add_bn(prefix + ".bn" + std::to_string(k), conv);
            c = conv.out_c;
            h = conv.out_h;
            w = conv.out_w;
        }
        if (bs.downsample) {
            auto ds = add_conv(prefix + ".downsample.conv", *bs.downsample, false, bc, bh, bw);
            add_bn(prefix + ".downsample.bn", ds);
        }
    }

    LayerInfo pool;
    pool.name = "pool";
    pool.kind = LayerKind::AvgPool;
    pool.in_c = pool.out_c = c;
    pool.in_h = h;
    pool.in_w = w;
    pool.out_h = pool.out_w = 1;
    layers.push_back(pool);

    LayerInfo fc;
    fc.name = "fc";
    fc.kind = LayerKind::FullyConnected;
    fc.geom = ConvGeometry{c, s.num_classes, 1, 1, 1, 0};
    fc.in_c = c;
    fc.in_h = fc.in_w = 1;
    fc.out_c = s.num_classes;
    fc.out_h = fc.out_w = 1;
    layers.push_back(fc);
    return layers;
}

inline void validate(const NetworkSpec& s) { (void)expand_layers(s); }

// ---------------------------------------------------------------------------
// Presets

inline NetworkSpec imagenet_preset(std::string name, std::vector<std::size_t> convs_per_stage) {
    NetworkSpec s;
    s.name = std::move(name);
    s.input_channels = 3;
    s.input_height = s.input_width = 224;
    s.num_classes = 1000;
    s.stem = StemSpec{64, 7, 2, 3, true};
    const std::size_t widths[] = {64, 128, 256, 512};
    for (std::size_t i = 0; i < 4; ++i) s.stages.push_back({widths[i], convs_per_stage[i], i == 0 ? 1u : 2u});
    return s;
}

inline std::vector<std::string> preset_names() { return {"bireal18", "bireal34", "tiny", "fig3"}; }

/// Named architectures. "tiny" is the desk preset; "fig3" is a 32-channel
/// 14x14 map with 3x3x32 kernels.
inline NetworkSpec preset(const std::string& name) {
    if (name == "bireal18") return imagenet_preset(name, {4, 4, 4, 4});
    if (name == "bireal34") return imagenet_preset(name, {6, 8, 12, 6});
    if (name == "tiny") {
        NetworkSpec s;
        s.name = name;
        s.stem = StemSpec{16, 3, 1, 1, false};
        s.stages = {{16, 2, 1}, {32, 2, 2}};
        return s;
    }
    if (name == "fig3") {
        NetworkSpec s;
        s.name = name;
        s.input_channels = 32;
        s.input_height = s.input_width = 14;
        s.stem = StemSpec{32, 3, 1, 1, false};
        s.stages = {{32, 2, 1}};
        return s;
    }
    throw SpecError("unknown preset '" + name + "'");
}

// ---------------------------------------------------------------------------
// JSON descriptor

inline nlohmann::json to_json(const NetworkSpec& s) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& st : s.stages)
        stages.push_back({{"channels", st.channels}, {"convs", st.convs}, {"stride", st.stride}});
    return {{"name", s.name},
            {"variant", to_string(s.variant)},
            {"precision", s.precision == Precision::Binary ? "binary" : "full"},
            {"input", {s.input_channels, s.input_height, s.input_width}},
            {"num_classes", s.num_classes},
            {"stem",
             {{"channels", s.stem.channels},
              {"kernel", s.stem.kernel},
              {"stride", s.stem.stride},
              {"padding", s.stem.padding},
              {"maxpool", s.stem.maxpool}}},
            {"stages", stages},
            {"bn_eps", s.bn_eps},
            {"bn_momentum", s.bn_momentum}};
}

inline NetworkSpec spec_from_json(const nlohmann::json& j) {
    try {
        NetworkSpec s;
        s.name = j.value("name", std::string("custom"));
        s.variant = parse_variant(j.value("variant", std::string("bireal")));
        const auto precision = j.value("precision", std::string("binary"));
        if (precision != "binary" && precision != "full")
            throw SpecError("unknown precision '" + precision + "'");
        s.precision = precision == "binary" ? Precision::Binary : Precision::Full;
        const auto& in = j.at("input");
        if (!in.is_array() || in.size() != 3) throw SpecError("input must be [C, H, W]");
        s.input_channels = in[0].get<std::size_t>();
        s.input_height = in[1].get<std::size_t>();
        s.input_width = in[2].get<std::size_t>();
        s.num_classes = j.at("num_classes").get<std::size_t>();
        const auto& st = j.at("stem");
        s.stem.channels = st.at("channels").get<std::size_t>();
        s.stem.kernel = st.value("kernel", std::size_t{3});
        s.stem.stride = st.value("stride", std::size_t{1});
        s.stem.padding = st.value("padding", std::size_t{1});
        s.stem.maxpool = st.value("maxpool", false);
        for (const auto& sj : j.at("stages"))
            s.stages.push_back({sj.at("channels").get<std::size_t>(), sj.at("convs").get<std::size_t>(),
                                sj.value("stride", std::size_t{1})});
        s.bn_eps = j.value("bn_eps", 1e-5);
        s.bn_momentum = j.value("bn_momentum", 0.1);
        validate(s);
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("malformed network descriptor: ") + e.what());
    }
}

}  // namespace bireal
