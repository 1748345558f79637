#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "bireal/conv.hpp"
#include "bireal/errors.hpp"
#include "bireal/layers.hpp"
#include "bireal/spec.hpp"
#include "bireal/tensor.hpp"
#include "bireal/train_math.hpp"

namespace bireal {

/// How a forward pass treats activations and binarized weights.
enum class Mode {
    BinaryInfer,   ///< bit-packed activations and weights, XNOR-popcount convs
    BinaryTrain,   ///< sign activations, binarized master weights, real arithmetic
    Surrogate,     ///< sign replaced by the piecewise polynomial everywhere (smooth)
    PretrainClip,  ///< real-valued twin with clip(-1, x, 1)
    PretrainRelu,  ///< real-valued twin with ReLU
};

/// How binarized weights are derived from the master weights.
enum class WeightUpdate {
    OriginalSte,     ///< sign(W_r), straight-through gradient
    MagnitudeAware,  ///< mean|W_r| * sign(W_r), straight-through gradient
};

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::BinaryInfer: return "binary_infer";
        case Mode::BinaryTrain: return "binary_train";
        case Mode::Surrogate: return "surrogate";
        case Mode::PretrainClip: return "pretrain_clip";
        case Mode::PretrainRelu: return "pretrain_relu";
    }
    return "?";
}

struct ForwardOptions {
    Mode mode = Mode::BinaryInfer;
    BnMode bn_mode = BnMode::Eval;
    SurrogateKind act_backward = SurrogateKind::PiecewisePoly;
    WeightUpdate weight_update = WeightUpdate::MagnitudeAware;
    ScaleScope scale_scope = ScaleScope::PerKernel;
    unsigned threads = 1;
};

/// A conv followed by BatchNorm. Binary units sign their input first and
/// binarize their weights; real units (stem, downsample) do neither.
template <class T>
struct ConvUnit {
    std::string conv_name;
    std::string bn_name;
    ConvGeometry geom;
    bool binary = false;
    Tensor<T> weight;  ///< master weights W_r; exactly +-1 once absorbed
    BatchNormParams<T> bn;
    BitTensor packed;  ///< 1-bit weights, valid once absorbed

    /// Padding value of the conv input: binary domain has no zero.
    T pad_value() const noexcept { return binary ? T{-1} : T{0}; }
};

template <class T>
struct Block {
    BlockSpec spec;
    std::vector<ConvUnit<T>> units;
    std::optional<ConvUnit<T>> downsample;
};

/// Parameters of a whole network (the spec's NetParams).
template <class T>
struct Network {
    NetworkSpec spec;
    ConvUnit<T> stem;
    std::vector<Block<T>> blocks;
    Tensor<T> fc_weight;  ///< [classes, features]
    Tensor<T> fc_bias;
    bool absorbed = false;  ///< weights are +-1 and BN carries the scale
};

enum class ParamRole { BinaryWeight, RealWeight, Bias, BnGamma, BnBeta, BnRunningMean, BnRunningVar };

inline bool is_buffer(ParamRole r) { return r == ParamRole::BnRunningMean || r == ParamRole::BnRunningVar; }
inline bool is_bn_affine(ParamRole r) { return r == ParamRole::BnGamma || r == ParamRole::BnBeta; }

template <class Tensor_>
struct ParamRef {
    std::string name;
    ParamRole role;
    Tensor_* tensor;
};

namespace detail {

template <class NetT, class F>
void visit_units(NetT& net, F&& f) {
    f(net.stem);
    for (auto& b : net.blocks) {
        for (auto& u : b.units) f(u);
        if (b.downsample) f(*b.downsample);
    }
}

template <class NetT>
auto collect_params(NetT& net, bool with_buffers) {
    using TensorT = std::conditional_t<std::is_const_v<NetT>, const decltype(net.fc_bias), decltype(net.fc_bias)>;
    std::vector<ParamRef<TensorT>> out;
    visit_units(net, [&](auto& u) {
        out.push_back({u.conv_name + ".weight", u.binary ? ParamRole::BinaryWeight : ParamRole::RealWeight, &u.weight});
        out.push_back({u.bn_name + ".gamma", ParamRole::BnGamma, &u.bn.gamma});
        out.push_back({u.bn_name + ".beta", ParamRole::BnBeta, &u.bn.beta});
        if (with_buffers) {
            out.push_back({u.bn_name + ".running_mean", ParamRole::BnRunningMean, &u.bn.running_mean});
            out.push_back({u.bn_name + ".running_var", ParamRole::BnRunningVar, &u.bn.running_var});
        }
    });
    out.push_back({"fc.weight", ParamRole::RealWeight, &net.fc_weight});
    out.push_back({"fc.bias", ParamRole::Bias, &net.fc_bias});
    return out;
}

}  // namespace detail

/// Trainable tensors in a fixed order; with_buffers adds BN running stats.
template <class T>
std::vector<ParamRef<Tensor<T>>> parameters(Network<T>& net, bool with_buffers = false) {
    return detail::collect_params(net, with_buffers);
}

template <class T>
std::vector<ParamRef<const Tensor<T>>> parameters(const Network<T>& net, bool with_buffers = false) {
    return detail::collect_params(net, with_buffers);
}

template <class T>
std::size_t parameter_count(const Network<T>& net) {
    std::size_t n = 0;
    for (const auto& p : parameters(net)) n += p.tensor->numel();
    return n;
}

/// Same structure as `net` with every tensor zeroed; used as a gradient store.
template <class T>
Network<T> zeros_like(const Network<T>& net) {
    Network<T> z = net;
    for (auto& p : parameters(z, true)) p.tensor->fill(T{0});
    return z;
}

/// Allocates parameters for `spec`: Kaiming-normal convs, BN gamma=1 beta=0.
template <class T>
Network<T> build(const NetworkSpec& spec, std::uint64_t seed = 1) {
    validate(spec);
    std::mt19937_64 rng(seed);
    const T eps = static_cast<T>(spec.bn_eps), mom = static_cast<T>(spec.bn_momentum);

    auto make_unit = [&](std::string conv_name, std::string bn_name, const ConvGeometry& g, bool binary) {
        ConvUnit<T> u;
        u.conv_name = std::move(conv_name);
        u.bn_name = std::move(bn_name);
        u.geom = g;
        u.binary = binary;
        u.weight = Tensor<T>(g.weight_shape());
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(g.fan_in())));
        for (auto& v : u.weight.data()) v = static_cast<T>(dist(rng));
        u.bn = BatchNormParams<T>(g.out_channels, eps, mom);
        return u;
    };

    Network<T> net;
    net.spec = spec;
    net.stem = make_unit("stem.conv", "stem.bn", stem_geometry(spec), false);
    std::size_t c = spec.stem.channels;
    const auto blocks = spec.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto& bs = blocks[b];
        const std::string prefix = "block" + std::to_string(b);
        Block<T> blk;
        blk.spec = bs;
        for (std::size_t k = 0; k < bs.convs; ++k) {
            const std::size_t in = k == 0 ? bs.in_channels : bs.out_channels;
            blk.units.push_back(make_unit(prefix + ".conv" + std::to_string(k), prefix + ".bn" + std::to_string(k),
                                          block_conv_geometry(in, bs.out_channels, k == 0 ? bs.stride : 1), true));
        }
        if (bs.downsample)
            blk.downsample = make_unit(prefix + ".downsample.conv", prefix + ".downsample.bn", *bs.downsample, false);
        net.blocks.push_back(std::move(blk));
        c = bs.out_channels;
    }
    net.fc_weight = Tensor<T>({spec.num_classes, c});
    std::normal_distribution<double> fc_dist(0.0, std::sqrt(1.0 / static_cast<double>(c)));
    for (auto& v : net.fc_weight.data()) v = static_cast<T>(fc_dist(rng));
    net.fc_bias = Tensor<T>({spec.num_classes});
    return net;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <class T>
struct UnitCache {
    Tensor<T> input;      ///< real input to the unit (pre-sign for binary units)
    Tensor<T> conv_in;    ///< activation fed to the conv
    Tensor<T> w_eff;      ///< weights used by the conv
    Tensor<T> bn_out;
    BatchNormCache<T> bn;
};

template <class T>
struct BlockCache {
    Tensor<T> input;
    std::vector<UnitCache<T>> units;
    std::optional<UnitCache<T>> downsample;
    Tensor<T> output;
};

template <class T>
struct ForwardCache {
    ForwardOptions opts;
    UnitCache<T> stem;
    Shape prepool_shape;
    std::vector<std::size_t> pool_argmax;
    std::vector<BlockCache<T>> blocks;
    Tensor<T> features;  ///< globally pooled final map [N, C]
    Tensor<T> final_map;
};

namespace detail {

template <class T>
Tensor<T> binary_weights(const ConvUnit<T>& u, const ForwardOptions& o) {
    switch (o.mode) {
        case Mode::BinaryTrain:
            return o.weight_update == WeightUpdate::MagnitudeAware ? magnitude_aware_binarize(u.weight, o.scale_scope)
                                                                   : sign_forward(u.weight);
        case Mode::Surrogate:
            return o.weight_update == WeightUpdate::MagnitudeAware ? scaled_poly_weights(u.weight, o.scale_scope)
                                                                   : poly_forward(u.weight);
        default:
            return u.weight;
    }
}

template <class T>
Tensor<T> activation(const Tensor<T>& x, Mode mode) {
    switch (mode) {
        case Mode::BinaryTrain: return sign_forward(x);
        case Mode::Surrogate: return poly_forward(x);
        case Mode::PretrainClip: return clip_activation_forward(x);
        case Mode::PretrainRelu: return relu_forward(x);
        case Mode::BinaryInfer: break;
    }
    throw ModeError("no real-valued activation for binary_infer");
}

template <class UnitT, class T>
Tensor<T> unit_forward(UnitT& u, const Tensor<T>& x, const ForwardOptions& o, UnitCache<T>* cache) {
    constexpr bool kMutable = !std::is_const_v<UnitT>;
    Tensor<T> m;
    if (u.binary && o.mode == Mode::BinaryInfer) {
        m = binconv2d<T>(sign_pack(x), u.packed, u.geom, o.threads);
    } else {
        Tensor<T> s = u.binary ? activation(x, o.mode) : x;
        Tensor<T> w = u.binary ? binary_weights(u, o) : u.weight;
        m = float_conv2d(s, w, u.geom, u.pad_value());
        if (cache) {
            cache->conv_in = std::move(s);
            cache->w_eff = std::move(w);
        }
    }
    Tensor<T> y;
    BatchNormCache<T>* bn_cache = cache ? &cache->bn : nullptr;
    if constexpr (kMutable) {
        y = batchnorm_forward(m, u.bn, o.bn_mode, bn_cache);
    } else {
        if (o.bn_mode == BnMode::Train) throw ModeError("train-mode BatchNorm needs mutable parameters");
        y = batchnorm_forward(m, u.bn, bn_cache);
    }
    if (cache) {
        cache->input = x;
        cache->bn_out = y;
    }
    return y;
}

template <class T>
Tensor<T> unit_backward(const ConvUnit<T>& u, const UnitCache<T>& c, const Tensor<T>& grad_y,
                        const ForwardOptions& o, ConvUnit<T>& g) {
    auto bn = batchnorm_backward(grad_y, u.bn, c.bn);
    add_inplace(g.bn.gamma, bn.grad_gamma);
    add_inplace(g.bn.beta, bn.grad_beta);
    auto conv = float_conv2d_backward(bn.grad_x, c.conv_in, c.w_eff, u.geom, u.pad_value());
    if (!u.binary) {
        add_inplace(g.weight, conv.grad_w);
        return std::move(conv.grad_a);
    }
    Tensor<T> grad_w;
    switch (o.mode) {
        case Mode::BinaryTrain:
            // Both weight rules share the straight-through gate; the magnitude
            // enters through the scaled forward.
            grad_w = magnitude_aware_backward(u.weight, conv.grad_w);
            break;
        case Mode::Surrogate:
            grad_w = o.weight_update == WeightUpdate::MagnitudeAware
                         ? scaled_poly_weights_backward(u.weight, conv.grad_w, o.scale_scope)
                         : poly_backward(u.weight, conv.grad_w);
            break;
        default:
            grad_w = std::move(conv.grad_w);
    }
    add_inplace(g.weight, grad_w);
    switch (o.mode) {
        case Mode::BinaryTrain: return surrogate_backward(o.act_backward, c.input, conv.grad_a);
        case Mode::Surrogate: return poly_backward(c.input, conv.grad_a);
        case Mode::PretrainClip: return clip_activation_backward(c.input, conv.grad_a);
        case Mode::PretrainRelu: return relu_backward(c.input, conv.grad_a);
        case Mode::BinaryInfer: break;
    }
    throw ModeError("binary_infer has no backward pass");
}

template <class NetT, class T>
Tensor<T> forward_impl(NetT& net, const Tensor<T>& input, const ForwardOptions& o, ForwardCache<T>* cache) {
    const auto& spec = net.spec;
    const Shape expected{input.rank() == 4 ? input.dim(0) : 0, spec.input_channels, spec.input_height,
                         spec.input_width};
    if (input.shape() != expected)
        throw ShapeError("input shape " + shape_str(input.shape()) + " does not match network input (N," +
                         std::to_string(spec.input_channels) + "," + std::to_string(spec.input_height) + "," +
                         std::to_string(spec.input_width) + ")");
    if (o.mode == Mode::BinaryInfer && !net.absorbed)
        throw ModeError("binary_infer requires absorbed parameters (run absorb_bn_and_freeze first)");
    if (cache) {
        cache->opts = o;
        cache->blocks.assign(net.blocks.size(), {});
    }

    Tensor<T> h = unit_forward(net.stem, input, o, cache ? &cache->stem : nullptr);
    if (spec.stem.maxpool) {
        auto p = maxpool_forward(h, kMaxPoolGeometry);
        if (cache) {
            cache->prepool_shape = h.shape();
            cache->pool_argmax = std::move(p.argmax);
        }
        h = std::move(p.out);
    }

    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        auto& blk = net.blocks[b];
        BlockCache<T>* bc = cache ? &cache->blocks[b] : nullptr;
        if (bc) {
            bc->input = h;
            bc->units.resize(blk.units.size());
        }
        Tensor<T> x = h;
        Tensor<T> y = x;
        for (std::size_t k = 0; k < blk.units.size(); ++k)
            y = unit_forward(blk.units[k], y, o, bc ? &bc->units[k] : nullptr);
        if (blk.spec.shortcut) {
            Tensor<T> sc;
            if (blk.downsample) {
                if (bc) bc->downsample.emplace();
                sc = unit_forward(*blk.downsample, x, o, bc ? &*bc->downsample : nullptr);
            } else {
                sc = std::move(x);
            }
            // Running real-valued sum: shortcut first, then this block's BN output.
            add_inplace(sc, y);
            h = std::move(sc);
        } else {
            h = std::move(y);
        }
        if (bc) bc->output = h;
    }

    Tensor<T> features = global_avgpool_forward(h);
    Tensor<T> logits = linear_forward(features, net.fc_weight, net.fc_bias);
    if (cache) {
        cache->final_map = std::move(h);
        cache->features = std::move(features);
    }
    return logits;
}

}  // namespace detail

/// Read-only forward (eval-mode BatchNorm). Safe to call concurrently.
template <class T>
Tensor<T> forward(const Network<T>& net, const Tensor<T>& input, const ForwardOptions& opts) {
    return detail::forward_impl(net, input, opts, static_cast<ForwardCache<T>*>(nullptr));
}

/// Forward that records what backward needs; train-mode BN updates running stats.
template <class T>
Tensor<T> forward(Network<T>& net, const Tensor<T>& input, const ForwardOptions& opts, ForwardCache<T>& cache) {
    return detail::forward_impl(net, input, opts, &cache);
}

/// Reverse pass. Returns gradients in a Network-shaped store (running-stat
/// slots stay zero).
template <class T>
Network<T> backward(const Network<T>& net, const ForwardCache<T>& cache, const Tensor<T>& grad_logits) {
    const ForwardOptions& o = cache.opts;
    if (o.mode == Mode::BinaryInfer) throw ModeError("binary_infer has no backward pass");
    Network<T> g = zeros_like(net);
    auto lin = linear_backward(grad_logits, cache.features, net.fc_weight);
    add_inplace(g.fc_weight, lin.grad_w);
    add_inplace(g.fc_bias, lin.grad_b);
    Tensor<T> grad_h = global_avgpool_backward(lin.grad_x, cache.final_map.shape());

    for (std::size_t b = net.blocks.size(); b-- > 0;) {
        const auto& blk = net.blocks[b];
        const auto& bc = cache.blocks[b];
        Tensor<T> grad_y = grad_h;
        for (std::size_t k = blk.units.size(); k-- > 0;)
            grad_y = detail::unit_backward(blk.units[k], bc.units[k], grad_y, o, g.blocks[b].units[k]);
        if (blk.spec.shortcut) {
            // fan-out at the block input: main path + shortcut
            if (blk.downsample)
                add_inplace(grad_y, detail::unit_backward(*blk.downsample, *bc.downsample, grad_h, o, *g.blocks[b].downsample));
            else
                add_inplace(grad_y, grad_h);
        }
        grad_h = std::move(grad_y);
    }

    if (net.spec.stem.maxpool) grad_h = maxpool_backward(grad_h, cache.pool_argmax, cache.prepool_shape);
    detail::unit_backward(net.stem, cache.stem, grad_h, o, g.stem);
    return g;
}

/// Constrains every binary conv to sign(W_r) and folds the per-kernel weight
/// scale into the following BatchNorm so eval outputs are unchanged:
/// with m = s*m', mu' = mu/s, var' = var/s^2, gamma' = gamma*s*sqrt(var'+eps)/sqrt(var+eps).
template <class T>
void fold_weight_scale(Network<T>& net, WeightUpdate weight_update, ScaleScope scope) {
    detail::visit_units(net, [&](ConvUnit<T>& u) {
        if (!u.binary) return;
        std::vector<T> scales(u.geom.out_channels, T{1});
        if (weight_update == WeightUpdate::MagnitudeAware) scales = kernel_scales(u.weight, scope);
        for (std::size_t o = 0; o < scales.size(); ++o) {
            const T s = scales[o];
            if (!(s > T{0})) continue;
            auto& bn = u.bn;
            const T var = bn.running_var[o];
            const T new_var = var / (s * s);
            bn.gamma[o] = bn.gamma[o] * s * std::sqrt(new_var + bn.eps) / std::sqrt(var + bn.eps);
            bn.running_mean[o] /= s;
            bn.running_var[o] = new_var;
        }
        u.weight = sign_forward(u.weight);
        u.packed = sign_pack(u.weight);
    });
    net.absorbed = true;
}

/// Rebuilds the packed weights from +-1 master weights (after loading).
template <class T>
void repack_binary_weights(Network<T>& net) {
    detail::visit_units(net, [](ConvUnit<T>& u) {
        if (u.binary) u.packed = sign_pack(u.weight);
    });
}

/// Converts between scalar types (float <-> double) keeping structure.
template <class U, class T>
Network<U> network_cast(const Network<T>& net) {
    Network<U> out;
    out.spec = net.spec;
    out.absorbed = net.absorbed;
    auto cast_unit = [](const ConvUnit<T>& u) {
        ConvUnit<U> v;
        v.conv_name = u.conv_name;
        v.bn_name = u.bn_name;
        v.geom = u.geom;
        v.binary = u.binary;
        v.weight = u.weight.template cast<U>();
        v.bn.gamma = u.bn.gamma.template cast<U>();
        v.bn.beta = u.bn.beta.template cast<U>();
        v.bn.running_mean = u.bn.running_mean.template cast<U>();
        v.bn.running_var = u.bn.running_var.template cast<U>();
        v.bn.eps = static_cast<U>(u.bn.eps);
        v.bn.momentum = static_cast<U>(u.bn.momentum);
        v.packed = u.packed;
        return v;
    };
    out.stem = cast_unit(net.stem);
    for (const auto& b : net.blocks) {
        Block<U> nb;
        nb.spec = b.spec;
        for (const auto& u : b.units) nb.units.push_back(cast_unit(u));
        if (b.downsample) nb.downsample = cast_unit(*b.downsample);
        out.blocks.push_back(std::move(nb));
    }
    out.fc_weight = net.fc_weight.template cast<U>();
    out.fc_bias = net.fc_bias.template cast<U>();
    return out;
}

// ---------------------------------------------------------------------------
// Representational capability

/// Capability of one tensor: values_per_entry ^ entries configurations.
struct CapabilityRow {
    std::string name;
    std::uint64_t values_per_entry = 0;
    std::uint64_t entries = 0;

    double log2_capability() const {
        return static_cast<double>(entries) * std::log2(static_cast<double>(values_per_entry));
    }
};

/// Per-tensor capability of the binarized blocks: a sign output has 2 values
/// per entry, a 1-bit conv (and its BatchNorm, a bijection) C*Kh*Kw+1, and a
/// shortcut sum (C*Kh*Kw+1)^2.
inline std::vector<CapabilityRow> capability_report(const NetworkSpec& spec) {
    std::vector<CapabilityRow> rows;
    const auto layers = expand_layers(spec);
    const auto blocks = spec.blocks();
    std::size_t cursor = 0;
    auto next_conv = [&](const std::string& name) -> const LayerInfo& {
        while (layers[cursor].name != name) ++cursor;
        return layers[cursor];
    };
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const std::string prefix = "block" + std::to_string(b);
        std::uint64_t last_values = 0, last_entries = 0;
        for (std::size_t k = 0; k < blocks[b].convs; ++k) {
            const auto& conv = next_conv(prefix + ".conv" + std::to_string(k));
            const std::uint64_t in_entries = conv.in_c * conv.in_h * conv.in_w;
            const std::uint64_t values = conv.geom.fan_in() + 1;
            const std::uint64_t out_entries = conv.output_elems();
            rows.push_back({prefix + ".sign" + std::to_string(k), 2, in_entries});
            rows.push_back({prefix + ".conv" + std::to_string(k), values, out_entries});
            rows.push_back({prefix + ".bn" + std::to_string(k), values, out_entries});
            last_values = values;
            last_entries = out_entries;
        }
        if (blocks[b].shortcut) rows.push_back({prefix + ".add", last_values * last_values, last_entries});
    }
    return rows;
}

}  // namespace bireal
