#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bireal/analysis.hpp"
#include "bireal/dataset.hpp"
#include "bireal/errors.hpp"
#include "bireal/model.hpp"
#include "bireal/spec.hpp"
#include "bireal/trainer.hpp"

namespace bireal {

/// Where a dataset comes from. Text form:
///   idx:<images-file>,<labels-file>
///   synthetic[:classes=K,size=S,n=PER_CLASS,spread=X,seed=N]
struct DatasetSource {
    enum class Kind { Idx, SyntheticBlobs } kind = Kind::SyntheticBlobs;
    std::string images_path;
    std::string labels_path;
    BlobsConfig blobs;
};

inline DatasetSource parse_data_source(const std::string& text) {
    DatasetSource src;
    const auto colon = text.find(':');
    const std::string head = text.substr(0, colon);
    const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
    if (head == "idx") {
        const auto comma = rest.find(',');
        if (comma == std::string::npos) throw Error("idx source needs '<images>,<labels>'");
        src.kind = DatasetSource::Kind::Idx;
        src.images_path = rest.substr(0, comma);
        src.labels_path = rest.substr(comma + 1);
        return src;
    }
    if (head != "synthetic") throw Error("unknown data source '" + text + "' (expected idx:... or synthetic[:...])");
    std::stringstream ss(rest);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw Error("synthetic option '" + item + "' needs key=value");
        const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
        try {
            if (key == "classes") src.blobs.classes = std::stoul(value);
            else if (key == "size") src.blobs.size = std::stoul(value);
            else if (key == "n") src.blobs.per_class = std::stoul(value);
            else if (key == "spread") src.blobs.spread = std::stod(value);
            else if (key == "seed") src.blobs.seed = std::stoull(value);
            else throw Error("unknown synthetic option '" + key + "'");
        } catch (const std::logic_error&) {
            throw Error("bad value for synthetic option '" + key + "'");
        }
    }
    return src;
}

inline Dataset load_dataset(const DatasetSource& src) {
    Dataset d = src.kind == DatasetSource::Kind::Idx ? load_idx(src.images_path, src.labels_path)
                                                      : synthetic_blobs(src.blobs);
    d.validate();
    return d;
}

inline Dataset load_dataset(const std::string& text) { return load_dataset(parse_data_source(text)); }

/// A preset name or a path to a JSON network descriptor.
inline NetworkSpec load_spec(const std::string& name_or_path) {
    for (const auto& p : preset_names())
        if (p == name_or_path) return preset(p);
    if (!std::filesystem::exists(name_or_path))
        throw SpecError("'" + name_or_path + "' is neither a preset nor a descriptor file");
    std::ifstream in(name_or_path);
    if (!in) throw IoError("cannot open '" + name_or_path + "'");
    try {
        return spec_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw SpecError(std::string("descriptor is not valid JSON: ") + e.what());
    }
}

/// Fits the spec's input extents and class count to a dataset.
inline NetworkSpec fit_spec_to_data(NetworkSpec spec, const Dataset& d) {
    spec.input_channels = d.channels();
    spec.input_height = d.height();
    spec.input_width = d.width();
    spec.num_classes = d.num_classes;
    validate(spec);
    return spec;
}

// ---------------------------------------------------------------------------
// Machine-readable records (one JSON object per line).
//
// Run reports:
//   {"type":"epoch","phase":..,"epoch":..,"lr":..,"train_loss":..,"train_acc":..,"val_acc":..}
//   {"type":"final","spec":..,"variant":..,"config":{..},"top1":..,"top5":..,"samples":..,"wall_time_s":..}
// Cost reports:
//   {"type":"layer","name":..,"real_params":..,"binary_params":..,"memory_bits":..,"real_flops":..,"binary_ops":..,"flops":..}
//   {"type":"total",..same fields..,"memory_saving":..,"speedup":..}
// Capability:
//   {"type":"capability","name":..,"values_per_entry":..,"entries":..,"log2_capability":..}

inline std::vector<nlohmann::json> report_records(const RunReport& r) {
    std::vector<nlohmann::json> out;
    for (const auto& e : r.epochs)
        out.push_back({{"type", "epoch"},
                       {"phase", e.phase},
                       {"epoch", e.epoch},
                       {"lr", e.lr},
                       {"train_loss", e.train_loss},
                       {"train_acc", e.train_acc},
                       {"val_acc", e.val_acc}});
    nlohmann::json fin{{"type", "final"},
                       {"spec", r.spec_name},
                       {"variant", r.variant},
                       {"config", r.config},
                       {"top1", r.final_eval.top1},
                       {"samples", r.final_eval.samples},
                       {"wall_time_s", r.wall_time_s}};
    if (r.final_eval.top5) fin["top5"] = *r.final_eval.top5;
    out.push_back(fin);
    return out;
}

inline nlohmann::json cost_record(const CostRow& row, const char* type) {
    return {{"type", type},
            {"name", row.name},
            {"real_params", row.real_params},
            {"binary_params", row.binary_params},
            {"memory_bits", row.memory_bits()},
            {"real_flops", row.real_flops},
            {"binary_ops", row.binary_ops},
            {"flops", row.flops()}};
}

inline std::vector<nlohmann::json> cost_records(const CostReport& rep) {
    std::vector<nlohmann::json> out;
    for (const auto& row : rep.rows) out.push_back(cost_record(row, "layer"));
    auto total = cost_record(rep.total, "total");
    total["spec"] = rep.spec_name;
    total["memory_saving"] = rep.memory_saving_ratio;
    total["speedup"] = rep.speedup_ratio;
    out.push_back(total);
    return out;
}

inline std::vector<nlohmann::json> capability_records(const std::vector<CapabilityRow>& rows) {
    std::vector<nlohmann::json> out;
    for (const auto& r : rows)
        out.push_back({{"type", "capability"},
                       {"name", r.name},
                       {"values_per_entry", r.values_per_entry},
                       {"entries", r.entries},
                       {"log2_capability", r.log2_capability()}});
    return out;
}

inline void write_jsonl(std::ostream& os, const std::vector<nlohmann::json>& records) {
    for (const auto& r : records) os << r.dump() << '\n';
}

inline void write_jsonl(const std::string& path, const std::vector<nlohmann::json>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot create '" + path + "'");
    write_jsonl(out, records);
    if (!out) throw IoError("error writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Human-readable tables

inline void print_cost_table(std::ostream& os, const CostReport& rep) {
    os << "cost report: " << rep.spec_name << '\n';
    os << std::left << std::setw(26) << "layer" << std::right << std::setw(12) << "real" << std::setw(12) << "binary"
       << std::setw(14) << "mem(bits)" << std::setw(16) << "real mults" << std::setw(16) << "1-bit mults" << '\n';
    auto line = [&](const CostRow& r) {
        os << std::left << std::setw(26) << r.name << std::right << std::setw(12) << r.real_params << std::setw(12)
           << r.binary_params << std::setw(14) << r.memory_bits() << std::setw(16) << r.real_flops << std::setw(16)
           << r.binary_ops << '\n';
    };
    for (const auto& r : rep.rows) line(r);
    line(rep.total);
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << static_cast<double>(rep.total.memory_bits()) / 1e6 << " Mbit, "
      << std::scientific << std::setprecision(2) << rep.total.flops() << " FLOPs, memory saving " << std::fixed
      << std::setprecision(2) << rep.memory_saving_ratio << "x, speedup " << rep.speedup_ratio << "x";
    os << "total: " << s.str() << '\n';
}

inline void print_capability_table(std::ostream& os, const std::vector<CapabilityRow>& rows) {
    os << std::left << std::setw(20) << "tensor" << std::right << std::setw(16) << "values/entry" << std::setw(12)
       << "entries" << std::setw(20) << "log2 capability" << '\n';
    for (const auto& r : rows) {
        std::ostringstream cap;
        cap << std::fixed << std::setprecision(2) << r.log2_capability();
        os << std::left << std::setw(20) << r.name << std::right << std::setw(16) << r.values_per_entry << std::setw(12)
           << r.entries << std::setw(20) << cap.str() << '\n';
    }
}

inline void print_run_summary(std::ostream& os, const RunReport& r) {
    for (const auto& e : r.epochs) {
        std::ostringstream s;
        s << std::left << std::setw(9) << e.phase << " epoch " << std::setw(3) << e.epoch << " lr " << std::scientific
          << std::setprecision(2) << e.lr << std::fixed << std::setprecision(4) << "  loss " << e.train_loss
          << "  train " << e.train_acc << "  val " << e.val_acc;
        os << s.str() << '\n';
    }
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << "final top-1 " << r.final_eval.top1;
    if (r.final_eval.top5) s << "  top-5 " << *r.final_eval.top5;
    s << "  (" << r.final_eval.samples << " samples)";
    os << s.str() << '\n';
}

}  // namespace bireal
