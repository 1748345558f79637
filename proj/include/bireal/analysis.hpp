#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bireal/spec.hpp"

// Static memory and FLOPs accounting.
//
// Memory: 32 bits per real-valued parameter, 1 bit per binarized weight. Real
// parameters are the stem conv, the 1x1 downsample convs, the classifier
// (weights and bias) and BatchNorm gamma/beta.
//
// FLOPs: multiplications only. A conv or FC layer costs output_elems * fan_in
// multiplications; binarized layers are charged 1/64 of that since XNOR and
// popcount process 64 lanes per word. BatchNorm, bias and pooling arithmetic
// is not counted.

namespace bireal {

struct CostRow {
    std::string name;
    std::uint64_t real_params = 0;
    std::uint64_t binary_params = 0;
    std::uint64_t real_flops = 0;  ///< real-valued multiplications
    std::uint64_t binary_ops = 0;  ///< 1-bit multiplications

    std::uint64_t memory_bits() const { return 32 * real_params + binary_params; }
    double flops() const { return static_cast<double>(real_flops) + static_cast<double>(binary_ops) / 64.0; }

    CostRow& operator+=(const CostRow& o) {
        real_params += o.real_params;
        binary_params += o.binary_params;
        real_flops += o.real_flops;
        binary_ops += o.binary_ops;
        return *this;
    }
};

struct CostReport {
    std::string spec_name;
    std::vector<CostRow> rows;
    CostRow total;
    double memory_saving_ratio = 1.0;  ///< baseline memory / this memory
    double speedup_ratio = 1.0;        ///< baseline FLOPs / this FLOPs
};

/// One row per parameterized layer (convs, BatchNorms, classifier).
inline std::vector<CostRow> cost_rows(const NetworkSpec& spec) {
    std::vector<CostRow> rows;
    for (const auto& l : expand_layers(spec)) {
        CostRow r;
        r.name = l.name;
        switch (l.kind) {
            case LayerKind::Conv: {
                const std::uint64_t w = l.weight_count();
                const std::uint64_t mults = static_cast<std::uint64_t>(l.output_elems()) * l.geom.fan_in();
                if (l.binary) {
                    r.binary_params = w;
                    r.binary_ops = mults;
                } else {
                    r.real_params = w;
                    r.real_flops = mults;
                }
                break;
            }
            case LayerKind::BatchNorm:
                r.real_params = 2 * l.out_c;
                break;
            case LayerKind::FullyConnected:
                r.real_params = l.weight_count() + l.out_c;
                r.real_flops = l.weight_count();
                break;
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
                continue;
        }
        rows.push_back(r);
    }
    return rows;
}

inline CostRow cost_total(const std::vector<CostRow>& rows) {
    CostRow t;
    t.name = "total";
    for (const auto& r : rows) t += r;
    return t;
}

inline std::uint64_t memory_bits(const NetworkSpec& spec) { return cost_total(cost_rows(spec)).memory_bits(); }
inline double flops(const NetworkSpec& spec) { return cost_total(cost_rows(spec)).flops(); }

struct CostRatios {
    double memory = 1.0;  ///< baseline / spec
    double flops = 1.0;
    double params = 1.0;
};

/// Ratios of baseline totals to spec totals.
inline CostRatios compare(const NetworkSpec& spec, const NetworkSpec& baseline) {
    const auto a = cost_total(cost_rows(spec));
    const auto b = cost_total(cost_rows(baseline));
    CostRatios r;
    r.memory = static_cast<double>(b.memory_bits()) / static_cast<double>(a.memory_bits());
    r.flops = b.flops() / a.flops();
    r.params = static_cast<double>(b.real_params + b.binary_params) / static_cast<double>(a.real_params + a.binary_params);
    return r;
}

/// Cost rows and totals, with ratios against `baseline` (by default the
/// full-precision twin of the same architecture).
inline CostReport analyze(const NetworkSpec& spec) {
    CostReport rep;
    rep.spec_name = spec.name;
    rep.rows = cost_rows(spec);
    rep.total = cost_total(rep.rows);
    const auto ratios = compare(spec, spec.with_precision(Precision::Full));
    rep.memory_saving_ratio = ratios.memory;
    rep.speedup_ratio = ratios.flops;
    return rep;
}

inline CostReport analyze(const NetworkSpec& spec, const NetworkSpec& baseline) {
    CostReport rep = analyze(spec);
    const auto ratios = compare(spec, baseline);
    rep.memory_saving_ratio = ratios.memory;
    rep.speedup_ratio = ratios.flops;
    return rep;
}

}  // namespace bireal
