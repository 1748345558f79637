#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bireal/dataset.hpp"
#include "bireal/errors.hpp"
#include "bireal/model.hpp"

namespace bireal {

/// Where the binary net's master weights come from.
enum class InitKind { Clip, Relu, Random };

inline std::string to_string(InitKind k) {
    switch (k) {
        case InitKind::Clip: return "clip";
        case InitKind::Relu: return "relu";
        case InitKind::Random: return "random";
    }
    return "?";
}
inline std::string to_string(WeightUpdate w) {
    return w == WeightUpdate::MagnitudeAware ? "magnitude-aware" : "original";
}
inline std::string to_string(SurrogateKind k) { return k == SurrogateKind::PiecewisePoly ? "poly" : "clip"; }
inline std::string to_string(ScaleScope s) { return s == ScaleScope::PerKernel ? "kernel" : "layer"; }

inline InitKind parse_init_kind(const std::string& s) {
    if (s == "clip") return InitKind::Clip;
    if (s == "relu") return InitKind::Relu;
    if (s == "random") return InitKind::Random;
    throw Error("unknown init kind '" + s + "' (clip, relu, random)");
}
inline WeightUpdate parse_weight_update(const std::string& s) {
    if (s == "original") return WeightUpdate::OriginalSte;
    if (s == "magnitude-aware") return WeightUpdate::MagnitudeAware;
    throw Error("unknown weight update '" + s + "' (original, magnitude-aware)");
}
inline SurrogateKind parse_act_backward(const std::string& s) {
    if (s == "clip") return SurrogateKind::ClipSTE;
    if (s == "poly") return SurrogateKind::PiecewisePoly;
    throw Error("unknown activation backward '" + s + "' (clip, poly)");
}
inline ScaleScope parse_scale_scope(const std::string& s) {
    if (s == "kernel") return ScaleScope::PerKernel;
    if (s == "layer") return ScaleScope::PerLayer;
    throw Error("unknown scale scope '" + s + "' (kernel, layer)");
}

/// Step decay: lr(e) = start * factor^(number of milestones <= e).
struct LrSchedule {
    double start = 0.01;
    std::vector<std::size_t> milestones;
    double factor = 0.1;

    double at(std::size_t epoch) const {
        const auto passed = std::count_if(milestones.begin(), milestones.end(), [&](std::size_t m) { return m <= epoch; });
        return start * std::pow(factor, static_cast<double>(passed));
    }
};

struct TrainConfig {
    InitKind init_kind = InitKind::Clip;
    WeightUpdate weight_update = WeightUpdate::MagnitudeAware;
    SurrogateKind activation_backward = SurrogateKind::PiecewisePoly;
    ScaleScope scale_scope = ScaleScope::PerKernel;

    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    double lr = 0.01;
    /// Empty means 50% and 75% of `epochs`.
    std::vector<std::size_t> milestones;

    std::size_t pretrain_epochs = 10;
    double pretrain_lr = 0.05;
    std::size_t bn_epochs = 1;

    double momentum = 0.9;
    double real_weight_decay = 0.0;  ///< binarized weights never decay
    std::uint64_t seed = 1;
    unsigned threads = 1;

    std::vector<std::size_t> effective_milestones(std::size_t total) const {
        if (!milestones.empty()) return milestones;
        std::vector<std::size_t> m;
        for (std::size_t v : {total / 2, total * 3 / 4})
            if (v > 0 && v < total && (m.empty() || v > m.back())) m.push_back(v);
        return m;
    }
    LrSchedule schedule() const { return {lr, effective_milestones(epochs), 0.1}; }
    LrSchedule pretrain_schedule() const { return {pretrain_lr, effective_milestones(pretrain_epochs), 0.1}; }

    void validate() const {
        if (!(lr >= 0.0) || !(pretrain_lr >= 0.0)) throw Error("learning rates must be non-negative");
        if (batch_size == 0) throw Error("batch size must be positive");
        for (std::size_t i = 0; i < milestones.size(); ++i) {
            if (milestones[i] >= epochs) throw Error("lr milestones must be below the epoch count");
            if (i && milestones[i] <= milestones[i - 1]) throw Error("lr milestones must be strictly increasing");
        }
    }

    nlohmann::json to_json() const {
        return {{"init", to_string(init_kind)},
                {"weight_update", to_string(weight_update)},
                {"act_backward", to_string(activation_backward)},
                {"scale_scope", to_string(scale_scope)},
                {"epochs", epochs},
                {"batch", batch_size},
                {"lr", lr},
                {"milestones", effective_milestones(epochs)},
                {"pretrain_epochs", pretrain_epochs},
                {"pretrain_lr", pretrain_lr},
                {"bn_epochs", bn_epochs},
                {"momentum", momentum},
                {"real_weight_decay", real_weight_decay},
                {"seed", seed}};
    }
};

/// Overrides fields of `cfg` from a JSON object using the to_json() keys.
/// Unknown keys are rejected; "milestones" replaces the default schedule.
inline void apply_config(TrainConfig& cfg, const nlohmann::json& j) {
    if (!j.is_object()) throw Error("training config must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "init") cfg.init_kind = parse_init_kind(v.get<std::string>());
            else if (key == "weight_update") cfg.weight_update = parse_weight_update(v.get<std::string>());
            else if (key == "act_backward") cfg.activation_backward = parse_act_backward(v.get<std::string>());
            else if (key == "scale_scope") cfg.scale_scope = parse_scale_scope(v.get<std::string>());
            else if (key == "epochs") cfg.epochs = v.get<std::size_t>();
            else if (key == "batch") cfg.batch_size = v.get<std::size_t>();
            else if (key == "lr") cfg.lr = v.get<double>();
            else if (key == "milestones") cfg.milestones = v.get<std::vector<std::size_t>>();
            else if (key == "pretrain_epochs") cfg.pretrain_epochs = v.get<std::size_t>();
            else if (key == "pretrain_lr") cfg.pretrain_lr = v.get<double>();
            else if (key == "bn_epochs") cfg.bn_epochs = v.get<std::size_t>();
            else if (key == "momentum") cfg.momentum = v.get<double>();
            else if (key == "real_weight_decay") cfg.real_weight_decay = v.get<double>();
            else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
            else if (key == "threads") cfg.threads = v.get<unsigned>();
            else throw Error("unknown training config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("bad training config value: ") + e.what());
    }
}

struct EpochRecord {
    std::string phase;  ///< "pretrain", "train" or "bn"
    std::size_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double train_acc = 0;
    double val_acc = 0;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct EvalResult {
    double top1 = 0;
    std::optional<double> top5;  ///< only with >= 5 classes
    std::size_t samples = 0;

    friend bool operator==(const EvalResult&, const EvalResult&) = default;
};

struct RunReport {
    std::string spec_name;
    std::string variant;
    nlohmann::json config;
    std::vector<EpochRecord> epochs;
    EvalResult final_eval;
    double wall_time_s = 0;  ///< excluded from equality

    friend bool operator==(const RunReport& a, const RunReport& b) {
        return a.spec_name == b.spec_name && a.variant == b.variant && a.config == b.config &&
               a.epochs == b.epochs && a.final_eval == b.final_eval;
    }
};

// ---------------------------------------------------------------------------

/// Top-1 (and top-5) accuracy under the given forward options, batch by batch.
inline EvalResult evaluate(const Network<float>& net, const Dataset& data, const ForwardOptions& opts,
                           std::size_t batch_size = 256) {
    EvalResult r;
    r.samples = data.size();
    if (data.size() == 0) return r;
    const std::size_t k = net.spec.num_classes;
    std::size_t top1 = 0, top5 = 0;
    std::vector<std::size_t> idx;
    std::vector<std::uint32_t> labels;
    for (std::size_t b = 0; b < data.size(); b += batch_size) {
        const std::size_t e = std::min(data.size(), b + batch_size);
        idx.resize(e - b);
        std::iota(idx.begin(), idx.end(), b);
        const auto logits = forward(net, data.gather(idx, labels), opts);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const float* row = logits.data().data() + i * k;
            const float target = row[labels[i]];
            // rank = number of classes scoring strictly higher, ties broken by index
            std::size_t rank = 0;
            for (std::size_t j = 0; j < k; ++j)
                if (row[j] > target || (row[j] == target && j < labels[i])) ++rank;
            if (rank == 0) ++top1;
            if (rank < 5) ++top5;
        }
    }
    r.top1 = static_cast<double>(top1) / static_cast<double>(data.size());
    if (k >= 5) r.top5 = static_cast<double>(top5) / static_cast<double>(data.size());
    return r;
}

/// Inference accuracy on the bit-packed path.
inline EvalResult evaluate(const Network<float>& net, const Dataset& data, unsigned threads = 1) {
    ForwardOptions o;
    o.mode = Mode::BinaryInfer;
    o.threads = threads;
    return evaluate(net, data, o);
}

/// Predicted class per sample.
inline std::vector<std::uint32_t> predict(const Network<float>& net, const Dataset& data, const ForwardOptions& opts,
                                          std::size_t batch_size = 256) {
    std::vector<std::uint32_t> out;
    std::vector<std::size_t> idx;
    std::vector<std::uint32_t> labels;
    const std::size_t k = net.spec.num_classes;
    for (std::size_t b = 0; b < data.size(); b += batch_size) {
        const std::size_t e = std::min(data.size(), b + batch_size);
        idx.resize(e - b);
        std::iota(idx.begin(), idx.end(), b);
        const auto logits = forward(net, data.gather(idx, labels), opts);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const float* row = logits.data().data() + i * k;
            out.push_back(static_cast<std::uint32_t>(std::max_element(row, row + k) - row));
        }
    }
    return out;
}

namespace detail {

/// Which parameters a phase may update.
enum class Trainable { All, BnOnly };

/// Mini-batch SGD over `epochs` epochs. Appends one record per epoch.
inline void run_epochs(Network<float>& net, const Dataset& train, const Dataset* val, ForwardOptions opts,
                       const LrSchedule& schedule, std::size_t epochs, Trainable trainable, const TrainConfig& cfg,
                       const std::string& phase, std::uint64_t stream, RunReport* report) {
    opts.bn_mode = BnMode::Train;
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + stream);
    std::vector<Tensor<float>> velocity;
    for (const auto& p : parameters(net)) velocity.emplace_back(p.tensor->shape());

    ForwardOptions eval_opts = opts;
    eval_opts.bn_mode = BnMode::Eval;
    if (eval_opts.mode == Mode::BinaryTrain && net.absorbed) eval_opts.mode = Mode::BinaryInfer;

    std::vector<std::size_t> order(train.size());
    std::vector<std::uint32_t> labels;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const double lr = schedule.at(epoch);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0;
        std::size_t correct = 0, seen = 0;
        for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), b + cfg.batch_size);
            // BatchNorm needs more than one sample per batch
            if (e - b < 2 && seen > 0) break;
            const std::span<const std::size_t> idx(order.data() + b, e - b);
            const auto batch = train.gather(idx, labels);
            ForwardCache<float> cache;
            const auto logits = forward(net, batch, opts, cache);
            const auto loss = softmax_cross_entropy(logits, labels);
            if (!std::isfinite(loss.loss))
                throw DivergenceError(phase + " diverged at epoch " + std::to_string(epoch) + " (loss " +
                                      std::to_string(loss.loss) + ")");
            loss_sum += static_cast<double>(loss.loss) * static_cast<double>(idx.size());
            correct += loss.correct;
            seen += idx.size();
            const auto grads = backward(net, cache, loss.grad_logits);
            auto params = parameters(net);
            const auto gparams = parameters(grads);
            for (std::size_t i = 0; i < params.size(); ++i) {
                const ParamRole role = params[i].role;
                if (trainable == Trainable::BnOnly && !is_bn_affine(role)) continue;
                SgdHyper<float> h;
                h.learning_rate = static_cast<float>(lr);
                h.momentum = static_cast<float>(cfg.momentum);
                h.weight_decay = role == ParamRole::RealWeight ? static_cast<float>(cfg.real_weight_decay) : 0.0f;
                sgd_step(*params[i].tensor, *gparams[i].tensor, velocity[i], h);
            }
        }
        if (report) {
            EpochRecord rec;
            rec.phase = phase;
            rec.epoch = epoch;
            rec.lr = lr;
            rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
            rec.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
            rec.val_acc = val ? evaluate(net, *val, eval_opts).top1 : 0.0;
            report->epochs.push_back(rec);
        }
    }
}

inline ForwardOptions train_options(const TrainConfig& cfg, Mode mode) {
    ForwardOptions o;
    o.mode = mode;
    o.act_backward = cfg.activation_backward;
    o.weight_update = cfg.weight_update;
    o.scale_scope = cfg.scale_scope;
    o.threads = cfg.threads;
    return o;
}

}  // namespace detail

/// Trains the real-valued twin (clip or ReLU nonlinearity) whose weights
/// initialize the binary net's master weights.
inline Network<float> pretrain(const NetworkSpec& spec, const Dataset& train, const TrainConfig& cfg,
                               const Dataset* val = nullptr, RunReport* report = nullptr) {
    cfg.validate();
    if (cfg.init_kind == InitKind::Random) throw Error("pretrain needs init kind clip or relu");
    auto net = build<float>(spec, cfg.seed);
    const Mode mode = cfg.init_kind == InitKind::Clip ? Mode::PretrainClip : Mode::PretrainRelu;
    detail::run_epochs(net, train, val, detail::train_options(cfg, mode), cfg.pretrain_schedule(), cfg.pretrain_epochs,
                       detail::Trainable::All, cfg, "pretrain", 1, report);
    return net;
}

/// Step one: binary forward with binarized master weights, surrogate
/// backward, SGD (momentum 0.9, no decay on binarized weights) on W_r.
inline void train_step_one(Network<float>& net, const Dataset& train, const TrainConfig& cfg,
                           const Dataset* val = nullptr, RunReport* report = nullptr) {
    cfg.validate();
    if (net.absorbed) throw ModeError("train_step_one on an absorbed network");
    detail::run_epochs(net, train, val, detail::train_options(cfg, Mode::BinaryTrain), cfg.schedule(), cfg.epochs,
                       detail::Trainable::All, cfg, "train", 2, report);
}

/// Step two: weights become exactly sign(W_r), the weight scale is folded
/// into BatchNorm, then only BatchNorm is retrained for cfg.bn_epochs at the
/// final step-one learning rate. The result is ready for binary_infer.
inline void absorb_bn_and_freeze(Network<float>& net, const Dataset& train, const TrainConfig& cfg,
                                 const Dataset* val = nullptr, RunReport* report = nullptr) {
    cfg.validate();
    fold_weight_scale(net, cfg.weight_update, cfg.scale_scope);
    const double final_lr = cfg.schedule().at(cfg.epochs ? cfg.epochs - 1 : 0);
    LrSchedule bn_schedule{final_lr, {}, 0.1};
    auto opts = detail::train_options(cfg, Mode::BinaryTrain);
    detail::run_epochs(net, train, val, opts, bn_schedule, cfg.bn_epochs, detail::Trainable::BnOnly, cfg, "bn", 3,
                       report);
    repack_binary_weights(net);
}

struct TrainResult {
    Network<float> net;
    RunReport report;
};

/// Initializes master weights per cfg.init_kind: a copy of the pretrained twin,
/// or a fresh random draw.
inline Network<float> initialize(const NetworkSpec& spec, const Dataset& train, const TrainConfig& cfg,
                                 const Dataset* val = nullptr, RunReport* report = nullptr) {
    if (cfg.init_kind == InitKind::Random) return build<float>(spec, cfg.seed);
    return pretrain(spec, train, cfg, val, report);
}

/// Full recipe from an initialized network: step one, absorption, evaluation.
inline TrainResult train_from(Network<float> net, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                              RunReport report = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    report.spec_name = net.spec.name;
    report.variant = to_string(net.spec.variant);
    report.config = cfg.to_json();
    train_step_one(net, train, cfg, &val, &report);
    absorb_bn_and_freeze(net, train, cfg, &val, &report);
    report.final_eval = evaluate(net, val, cfg.threads);
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(net), std::move(report)};
}

/// pretrain (if requested) -> step one -> absorb -> evaluate.
inline TrainResult run_training(const NetworkSpec& spec, const Dataset& train, const Dataset& val,
                                const TrainConfig& cfg) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RunReport report;
    auto net = initialize(spec, train, cfg, &val, &report);
    auto result = train_from(std::move(net), train, val, cfg, std::move(report));
    result.report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

struct AblationCell {
    BlockVariant variant = BlockVariant::BiReal;
    TrainConfig config;
    std::optional<RunReport> report;
    std::string error;  ///< non-empty when the cell failed

    nlohmann::json to_json() const {
        nlohmann::json j{{"variant", to_string(variant)},
                         {"init", to_string(config.init_kind)},
                         {"weight_update", to_string(config.weight_update)},
                         {"act_backward", to_string(config.activation_backward)},
                         {"seed", config.seed}};
        if (report) {
            j["top1"] = report->final_eval.top1;
            if (report->final_eval.top5) j["top5"] = *report->final_eval.top5;
            j["wall_time_s"] = report->wall_time_s;
        } else {
            j["error"] = error;
        }
        return j;
    }
};

/// The {init} x {weight update} x {activation backward} grid, one run per
/// cell and variant. Cells sharing (variant, init) share one pretraining run
/// and every cell starts from the same seeded draw. A failing cell records its
/// error and the grid continues.
inline std::vector<AblationCell> run_ablation(const NetworkSpec& base, const std::vector<BlockVariant>& variants,
                                              const std::vector<TrainConfig>& grid, const Dataset& train,
                                              const Dataset& val) {
    std::vector<AblationCell> cells;
    for (const auto v : variants) {
        const auto spec = base.with_variant(v);
        std::map<std::pair<InitKind, std::string>, Network<float>> init_cache;
        for (const auto& cfg : grid) {
            AblationCell cell;
            cell.variant = v;
            cell.config = cfg;
            try {
                cfg.validate();
                // pretraining depends only on init kind and the pretrain settings
                nlohmann::json pre = cfg.to_json();
                for (const char* k : {"weight_update", "act_backward", "epochs", "lr", "milestones", "bn_epochs"})
                    pre.erase(k);
                const auto cache_key = std::make_pair(cfg.init_kind, pre.dump());
                auto it = init_cache.find(cache_key);
                if (it == init_cache.end())
                    it = init_cache.emplace(cache_key, initialize(spec, train, cfg)).first;
                cell.report = train_from(it->second, train, val, cfg).report;
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

/// Table-1-shaped grid: {clip, relu} x {original, magnitude-aware} x {clip, poly}.
inline std::vector<TrainConfig> ablation_grid(const TrainConfig& base) {
    std::vector<TrainConfig> grid;
    for (auto init : {InitKind::Relu, InitKind::Clip})
        for (auto w : {WeightUpdate::OriginalSte, WeightUpdate::MagnitudeAware})
            for (auto a : {SurrogateKind::ClipSTE, SurrogateKind::PiecewisePoly}) {
                TrainConfig c = base;
                c.init_kind = init;
                c.weight_update = w;
                c.activation_backward = a;
                grid.push_back(c);
            }
    return grid;
}

}  // namespace bireal
