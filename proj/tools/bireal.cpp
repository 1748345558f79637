// bireal: train, evaluate and inspect 1-bit Bi-Real networks.
//
// Exit codes: 0 ok, 2 usage, 3 I/O, 4 bad file format or checksum,
// 5 training diverged, 6 invalid network spec or shape mismatch, 1 other.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bireal/bireal.hpp"

using namespace bireal;

namespace {

enum Exit : int { kOk = 0, kOther = 1, kUsage = 2, kIo = 3, kFormat = 4, kDiverged = 5, kSpec = 6 };

struct UsageError : Error {
    using Error::Error;
};

/// "HxW" -> (H, W)
std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
    const auto x = s.find_first_of("xX");
    try {
        if (x == std::string::npos) throw std::invalid_argument(s);
        std::size_t used = 0;
        const auto h = std::stoul(s.substr(0, x), &used);
        if (used != x) throw std::invalid_argument(s);
        const auto w = std::stoul(s.substr(x + 1), &used);
        if (used != s.size() - x - 1) throw std::invalid_argument(s);
        return {h, w};
    } catch (const std::logic_error&) {
        throw UsageError("--input-size expects HxW, got '" + s + "'");
    }
}

Dataset load_data(const std::string& text) {
    DatasetSource src;
    try {
        src = parse_data_source(text);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return load_dataset(src);
}

nlohmann::json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("config '" + path + "' is not valid JSON: " + e.what());
    }
}

// Options shared by train and ablate.
struct TrainFlags {
    std::string spec = "tiny";
    std::string data;
    std::string variant;
    std::string config;
    double val_fraction = 0.2;
    std::optional<std::uint64_t> split_seed;
    std::string report;

    std::string init, weight_update, act_backward, scale_scope;
    std::size_t epochs = 0, pretrain_epochs = 0, batch = 0, bn_epochs = 0;
    double lr = 0, pretrain_lr = 0;
    std::vector<std::size_t> milestones;
    std::uint64_t seed = 0;
    unsigned threads = 1;

    CLI::App* cmd = nullptr;

    void add_to(CLI::App& app, bool with_weight_axes) {
        cmd = &app;
        app.add_option("--spec", spec, "preset name or JSON network descriptor")->capture_default_str();
        app.add_option("--data", data, "idx:<images>,<labels> or synthetic[:classes=..,size=..,n=..,spread=..,seed=..]")
            ->required();
        app.add_option("--variant", variant, "block variant: bireal, resnet, plain");
        app.add_option("--config", config, "JSON training config (flags override it)");
        app.add_option("--val-fraction", val_fraction, "held-out fraction used for validation")
            ->check(CLI::Range(0.0, 0.99))
            ->capture_default_str();
        app.add_option("--split-seed", split_seed, "shuffle samples with this seed before splitting");
        app.add_option("--report", report, "write JSON-lines records to this file");
        if (with_weight_axes) {
            app.add_option("--init", init, "clip, relu or random");
            app.add_option("--weight-update", weight_update, "original or magnitude-aware");
            app.add_option("--act-backward", act_backward, "clip or poly");
        }
        app.add_option("--scale-scope", scale_scope, "kernel or layer");
        app.add_option("--epochs", epochs, "step-one epochs");
        app.add_option("--pretrain-epochs", pretrain_epochs, "real-valued pretraining epochs");
        app.add_option("--batch", batch, "mini-batch size");
        app.add_option("--lr", lr, "step-one starting learning rate");
        app.add_option("--pretrain-lr", pretrain_lr, "pretraining starting learning rate");
        app.add_option("--milestones", milestones, "epochs where the learning rate drops 10x")->delimiter(',');
        app.add_option("--bn-epochs", bn_epochs, "BatchNorm-only retraining epochs");
        app.add_option("--seed", seed, "seed for initialization and shuffling");
        app.add_option("--threads", threads, "worker threads for 1-bit convolutions");
    }

    bool given(const std::string& flag) const { return cmd->count(flag) > 0; }

    /// preset defaults < config file < flags
    TrainConfig resolve() const {
        TrainConfig cfg;
        if (!config.empty()) {
            try {
                apply_config(cfg, read_json_file(config));
            } catch (const IoError&) {
                throw;
            } catch (const Error& e) {
                throw UsageError(e.what());
            }
        }
        try {
            if (given("--init")) cfg.init_kind = parse_init_kind(init);
            if (given("--weight-update")) cfg.weight_update = parse_weight_update(weight_update);
            if (given("--act-backward")) cfg.activation_backward = parse_act_backward(act_backward);
            if (given("--scale-scope")) cfg.scale_scope = parse_scale_scope(scale_scope);
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        if (given("--epochs")) cfg.epochs = epochs;
        if (given("--pretrain-epochs")) cfg.pretrain_epochs = pretrain_epochs;
        if (given("--batch")) cfg.batch_size = batch;
        if (given("--lr")) cfg.lr = lr;
        if (given("--pretrain-lr")) cfg.pretrain_lr = pretrain_lr;
        if (given("--milestones")) cfg.milestones = milestones;
        if (given("--bn-epochs")) cfg.bn_epochs = bn_epochs;
        if (given("--seed")) cfg.seed = seed;
        if (given("--threads")) cfg.threads = threads;
        try {
            cfg.validate();
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
        return cfg;
    }

    NetworkSpec resolve_spec(const Dataset& d) const {
        auto s = load_spec(spec);
        if (!variant.empty()) s = s.with_variant(parse_variant(variant));
        return fit_spec_to_data(s, d);
    }
};

void emit(const std::string& path, const std::vector<nlohmann::json>& records) {
    if (!path.empty()) write_jsonl(path, records);
}

int cmd_train(const TrainFlags& f, const std::string& out) {
    const auto cfg = f.resolve();
    const auto data = load_data(f.data);
    const auto spec = f.resolve_spec(data);
    const auto [train, val] = split_holdout(data, f.val_fraction, f.split_seed);
    std::cerr << "training " << spec.name << " (" << to_string(spec.variant) << ") on " << train.size()
              << " samples, validating on " << val.size() << "\n";
    const auto result = run_training(spec, train, val, cfg);
    print_run_summary(std::cout, result.report);
    if (!out.empty()) save_model(result.net, out);
    emit(f.report, report_records(result.report));
    return kOk;
}

int cmd_ablate(const TrainFlags& f, const std::string& variants_csv) {
    const auto base_cfg = f.resolve();
    const auto data = load_data(f.data);
    const auto spec = f.resolve_spec(data);
    const auto [train, val] = split_holdout(data, f.val_fraction, f.split_seed);
    std::vector<BlockVariant> variants;
    std::stringstream ss(variants_csv);
    for (std::string v; std::getline(ss, v, ',');) variants.push_back(parse_variant(v));
    const auto cells = run_ablation(spec, variants, ablation_grid(base_cfg), train, val);
    std::vector<nlohmann::json> records;
    std::cout << "variant  init    weight           act    top-1\n";
    for (const auto& c : cells) {
        auto j = c.to_json();
        j["type"] = "cell";
        records.push_back(j);
        std::ostringstream line;
        line << std::left << std::setw(9) << to_string(c.variant) << std::setw(8) << to_string(c.config.init_kind)
             << std::setw(17) << to_string(c.config.weight_update) << std::setw(7)
             << to_string(c.config.activation_backward);
        if (c.report)
            line << std::fixed << std::setprecision(4) << c.report->final_eval.top1;
        else
            line << "failed: " << c.error;
        std::cout << line.str() << "\n";
    }
    emit(f.report, records);
    return kOk;
}

int cmd_eval(const std::string& model, const std::string& data_src, double val_fraction,
             std::optional<std::uint64_t> split_seed, unsigned threads, const std::string& report) {
    const auto net = load_model(model);
    if (!net.absorbed) throw ModeError("model holds master weights; only inference-state models can be evaluated");
    const auto data = load_data(data_src);
    const Dataset eval_set = val_fraction > 0 ? split_holdout(data, val_fraction, split_seed).second : data;
    if (eval_set.num_classes > net.spec.num_classes)
        throw ShapeError("data has " + std::to_string(eval_set.num_classes) + " classes, model " +
                         std::to_string(net.spec.num_classes));
    const auto r = evaluate(net, eval_set, threads);
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << "top-1 " << r.top1;
    if (r.top5) s << "  top-5 " << *r.top5;
    s << "  (" << r.samples << " samples)";
    std::cout << s.str() << "\n";
    nlohmann::json j{{"type", "eval"}, {"model", model}, {"top1", r.top1}, {"samples", r.samples}};
    if (r.top5) j["top5"] = *r.top5;
    emit(report, {j});
    return kOk;
}

NetworkSpec spec_with_size(const std::string& name, const std::string& variant, const std::string& size) {
    auto s = load_spec(name);
    if (!variant.empty()) s = s.with_variant(parse_variant(variant));
    if (!size.empty()) {
        const auto [h, w] = parse_size(size);
        s = s.with_input_size(h, w);
    }
    validate(s);
    return s;
}

void print_records(const std::string& format, const std::vector<nlohmann::json>& records,
                   const std::function<void()>& table) {
    if (format == "table" || format == "both") table();
    if (format == "jsonl" || format == "both") write_jsonl(std::cout, records);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Train, evaluate and inspect 1-bit Bi-Real networks"};
    app.require_subcommand(1);

    TrainFlags train_flags;
    std::string out;
    auto* train = app.add_subcommand("train", "pretrain, train, absorb BatchNorm, evaluate, save");
    train_flags.add_to(*train, true);
    train->add_option("--out", out, "write the inference model here");

    TrainFlags ablate_flags;
    std::string variants = "bireal,plain";
    auto* ablate = app.add_subcommand("ablate", "run the init x weight update x activation backward grid");
    ablate_flags.add_to(*ablate, false);
    ablate->add_option("--variants", variants, "comma-separated block variants")->capture_default_str();

    std::string model, eval_data, eval_report;
    double eval_val_fraction = 0;
    std::optional<std::uint64_t> eval_split_seed;
    unsigned eval_threads = 1;
    auto* eval = app.add_subcommand("eval", "evaluate a saved inference model on the bit-packed path");
    eval->add_option("--model", model, "model file")->required();
    eval->add_option("--data", eval_data, "dataset source")->required();
    eval->add_option("--val-fraction", eval_val_fraction, "evaluate only the held-out tail of this size")
        ->check(CLI::Range(0.0, 0.99));
    eval->add_option("--split-seed", eval_split_seed, "shuffle seed used when the model was trained");
    eval->add_option("--threads", eval_threads, "worker threads");
    eval->add_option("--report", eval_report, "write a JSON-lines record here");

    std::string an_spec = "bireal18", an_size, an_baseline = "full-precision", an_variant, an_format = "both",
                an_report;
    auto* analyze_cmd = app.add_subcommand("analyze", "memory and FLOPs per layer");
    analyze_cmd->add_option("--spec", an_spec, "preset or descriptor")->capture_default_str();
    analyze_cmd->add_option("--input-size", an_size, "override input extents, HxW");
    analyze_cmd->add_option("--baseline", an_baseline, "full-precision, self, or a preset/descriptor")
        ->capture_default_str();
    analyze_cmd->add_option("--variant", an_variant, "block variant");
    analyze_cmd->add_option("--format", an_format, "table, jsonl or both")
        ->check(CLI::IsMember({"table", "jsonl", "both"}))
        ->capture_default_str();
    analyze_cmd->add_option("--report", an_report, "write JSON-lines records here");

    std::string cap_spec = "fig3", cap_variant, cap_size, cap_format = "both", cap_report;
    auto* capability = app.add_subcommand("capability", "representational capability per tensor");
    capability->add_option("--spec", cap_spec, "preset or descriptor")->capture_default_str();
    capability->add_option("--variant", cap_variant, "bireal or plain");
    capability->add_option("--input-size", cap_size, "override input extents, HxW");
    capability->add_option("--format", cap_format, "table, jsonl or both")
        ->check(CLI::IsMember({"table", "jsonl", "both"}))
        ->capture_default_str();
    capability->add_option("--report", cap_report, "write JSON-lines records here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*train) return cmd_train(train_flags, out);
        if (*ablate) return cmd_ablate(ablate_flags, variants);
        if (*eval) return cmd_eval(model, eval_data, eval_val_fraction, eval_split_seed, eval_threads, eval_report);
        if (*analyze_cmd) {
            const auto spec = spec_with_size(an_spec, an_variant, an_size);
            CostReport rep;
            if (an_baseline == "full-precision")
                rep = analyze(spec);
            else if (an_baseline == "self")
                rep = analyze(spec, spec);
            else
                rep = analyze(spec, spec_with_size(an_baseline, "", an_size));
            const auto records = cost_records(rep);
            print_records(an_format, records, [&] { print_cost_table(std::cout, rep); });
            emit(an_report, records);
            return kOk;
        }
        if (*capability) {
            const auto rows = capability_report(spec_with_size(cap_spec, cap_variant, cap_size));
            const auto records = capability_records(rows);
            print_records(cap_format, records, [&] { print_capability_table(std::cout, rows); });
            emit(cap_report, records);
            return kOk;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kUsage;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const FormatError& e) {  // includes ChecksumError
        std::cerr << "format error: " << e.what() << "\n";
        return kFormat;
    } catch (const DivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return kDiverged;
    } catch (const SpecError& e) {
        std::cerr << "invalid spec: " << e.what() << "\n";
        return kSpec;
    } catch (const ShapeError& e) {
        std::cerr << "shape mismatch: " << e.what() << "\n";
        return kSpec;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kOther;
    }
    return kOther;
}
