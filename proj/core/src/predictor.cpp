#include "perfmodel/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace perfmodel {

using json = nlohmann::ordered_json;

namespace {

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

}  // namespace

double OverheadMeans::get(OverheadType t) const {
    switch (t) {
        case OverheadType::T1: return t1;
        case OverheadType::T2: return t2;
        case OverheadType::T3: return t3;
        case OverheadType::T4: return t4;
        case OverheadType::T5: return t5;
    }
    throw Error("bad overhead type");
}

OverheadBook OverheadBook::constant(double t1, double t2, double t3, double t4, double t5) {
    OverheadBook book;
    book.per_op_["__global__"] = {t1, t2, t3, t4, t5};
    book.identifier_ = "constant";
    return book;
}

OverheadBook OverheadBook::from_table(const OverheadTable& table, std::string identifier) {
    OverheadBook book;
    book.identifier_ = std::move(identifier);
    for (const auto& [op, slots] : table) {
        auto& dst = book.per_op_[op];
        for (int t = 0; t < kOverheadTypeCount; ++t)
            if (slots[t]) dst[t] = slots[t]->mean;
    }
    return book;
}

void OverheadBook::set(const std::string& op_name, OverheadType type, double mean_us) {
    per_op_[op_name][static_cast<int>(type)] = mean_us;
}

OverheadMeans OverheadBook::lookup(const std::string& op_name) const {
    const std::array<std::optional<double>, 5>* op_slots = nullptr;
    const std::array<std::optional<double>, 5>* global_slots = nullptr;
    if (auto it = per_op_.find(op_name); it != per_op_.end()) op_slots = &it->second;
    if (auto it = per_op_.find("__global__"); it != per_op_.end()) global_slots = &it->second;

    OverheadMeans out;
    for (int t = 0; t < kOverheadTypeCount; ++t) {
        double v;
        if (op_slots && (*op_slots)[t])
            v = *(*op_slots)[t];
        else if (global_slots && (*global_slots)[t])
            v = *(*global_slots)[t];
        else
            v = t == static_cast<int>(OverheadType::T4) ? t4_default_us : 0.0;
        switch (static_cast<OverheadType>(t)) {
            case OverheadType::T1: out.t1 = v; break;
            case OverheadType::T2: out.t2 = v; break;
            case OverheadType::T3: out.t3 = v; break;
            case OverheadType::T4: out.t4 = v; break;
            case OverheadType::T5: out.t5 = v; break;
        }
    }
    return out;
}

OverheadBook parse_overhead_book(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(std::string("overhead book parse: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("ops"))
        throw Error("overhead book: missing \"ops\" map");
    OverheadBook book;
    book.set_identifier(doc.value("workload", std::string{}));
    for (const auto& [op, slots] : doc.at("ops").items()) {
        for (int t = 0; t < kOverheadTypeCount; ++t) {
            const std::string key = overhead_type_name(static_cast<OverheadType>(t));
            if (!slots.contains(key)) continue;
            const auto& sj = slots.at(key);
            if (!sj.contains("mean"))
                throw Error("overhead book: op \"" + op + "\" " + key + " lacks mean");
            book.set(op, static_cast<OverheadType>(t), sj.at("mean").get<double>());
        }
    }
    return book;
}

OverheadBook parse_overhead_book(const std::string& text) {
    std::istringstream in(text);
    return parse_overhead_book(in);
}

OverheadBook load_overhead_book_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open overhead book " + path);
    OverheadBook book = parse_overhead_book(in);
    if (book.identifier().empty()) book.set_identifier(path);
    return book;
}

const std::string& prediction_mode_name(PredictionMode mode) {
    static const std::string names[3] = {"individual", "shared", "kernel_only"};
    return names[static_cast<int>(mode)];
}

PredictionMode prediction_mode_from_name(const std::string& name) {
    for (int i = 0; i < 3; ++i)
        if (prediction_mode_name(static_cast<PredictionMode>(i)) == name)
            return static_cast<PredictionMode>(i);
    throw Error("unknown prediction mode \"" + name + "\"");
}

double PerOpPrediction::overhead_total_us() const {
    return overheads.t1 * charge_counts[0] + overheads.t2 * charge_counts[1] +
           overheads.t3 * charge_counts[2] + overheads.t4 * charge_counts[3] +
           overheads.t5 * charge_counts[4];
}

PredictionReport predict_e2e(const ExecutionGraph& g, const KernelModelRegistry& registry,
                             const OverheadBook& book, const HardwareSpec& hw,
                             const PredictOptions& options) {
    registry.validate();
    PredictionReport report;
    report.mode = options.mode;
    report.multi_stream = options.multi_stream;
    report.book_id = book.identifier();
    report.hardware = hw.name;

    double cpu = 0;
    std::map<int, double> gpu;  // stream -> cursor
    for (std::int64_t op_id : topological_order(g)) {
        const OpNode& op = g.op(op_id);
        const OverheadMeans ov = book.lookup(op.name);
        PerOpPrediction row;
        row.op_id = op_id;
        row.name = op.name;
        row.stream = op.stream;
        row.overheads = ov;

        cpu += ov.t1;
        ++row.charge_counts[0];
        if (!op.kernel_calls.empty()) {
            cpu += ov.t2;
            ++row.charge_counts[1];
            double& stream_cursor = gpu[options.multi_stream ? op.stream : 0];
            for (std::size_t k = 0; k < op.kernel_calls.size(); ++k) {
                const double kernel_us = registry.predict_us(op.kernel_calls[k], op, g, hw);
                stream_cursor =
                    std::max(stream_cursor + options.kernel_gap_us, cpu + ov.t4 / 2.0) +
                    kernel_us;
                cpu += ov.t4;
                ++row.charge_counts[3];
                if (k + 1 < op.kernel_calls.size()) {
                    cpu += ov.t5;
                    ++row.charge_counts[4];
                }
                row.kernel_times_us.push_back(kernel_us);
                report.gpu_active_us += kernel_us;
            }
            cpu += ov.t3;
            ++row.charge_counts[2];
        } else {
            cpu += ov.t5;
            ++row.charge_counts[4];
        }
        report.per_op.push_back(std::move(row));
    }

    double gpu_max = 0;
    for (const auto& [stream, cursor] : gpu) gpu_max = std::max(gpu_max, cursor);
    report.cpu_time_us = cpu;
    report.total_us = std::max(gpu_max, cpu);
    report.gpu_idle_us = report.total_us - report.gpu_active_us;
    return report;
}

double predict_kernel_only(const ExecutionGraph& g, const KernelModelRegistry& registry,
                           const HardwareSpec& hw) {
    return predict_kernel_only_report(g, registry, hw).total_us;
}

PredictionReport predict_kernel_only_report(const ExecutionGraph& g,
                                            const KernelModelRegistry& registry,
                                            const HardwareSpec& hw) {
    registry.validate();
    PredictionReport report;
    report.mode = PredictionMode::KernelOnly;
    report.hardware = hw.name;
    for (std::int64_t op_id : topological_order(g)) {
        const OpNode& op = g.op(op_id);
        PerOpPrediction row;
        row.op_id = op_id;
        row.name = op.name;
        row.stream = op.stream;
        for (const KernelCall& call : op.kernel_calls) {
            const double kernel_us = registry.predict_us(call, op, g, hw);
            row.kernel_times_us.push_back(kernel_us);
            report.gpu_active_us += kernel_us;
        }
        report.per_op.push_back(std::move(row));
    }
    report.total_us = report.gpu_active_us;
    return report;
}

namespace {

/// Timeline entry of the reference simulator.
struct SimEvent {
    enum class Kind { OpBegin, Launch, KernelStart, KernelEnd, OpEnd };
    Kind kind;
    std::int64_t op_id;
    double time_us;
};

}  // namespace

double simulate_reference(const ExecutionGraph& g, const KernelModelRegistry& registry,
                          const OverheadBook& book, const HardwareSpec& hw,
                          const PredictOptions& options) {
    registry.validate();
    std::vector<SimEvent> timeline;
    double cpu_cursor = 0;
    std::map<int, double> stream_free;

    for (std::int64_t op_id : topological_order(g)) {
        const OpNode& op = g.op(op_id);
        const OverheadMeans ov = book.lookup(op.name);
        cpu_cursor += ov.t1;  // dispatch gap charged ahead of the op
        timeline.push_back({SimEvent::Kind::OpBegin, op_id, cpu_cursor});
        if (op.kernel_calls.empty()) {
            cpu_cursor += ov.t5;
            timeline.push_back({SimEvent::Kind::OpEnd, op_id, cpu_cursor});
            continue;
        }
        cpu_cursor += ov.t2;
        const int stream = options.multi_stream ? op.stream : 0;
        double& device_free = stream_free[stream];
        for (std::size_t k = 0; k < op.kernel_calls.size(); ++k) {
            const double launch_at = cpu_cursor;
            timeline.push_back({SimEvent::Kind::Launch, op_id, launch_at});
            const double kernel_us = registry.predict_us(op.kernel_calls[k], op, g, hw);
            const double start =
                std::max(device_free + options.kernel_gap_us, launch_at + ov.t4 / 2.0);
            timeline.push_back({SimEvent::Kind::KernelStart, op_id, start});
            device_free = start + kernel_us;
            timeline.push_back({SimEvent::Kind::KernelEnd, op_id, device_free});
            cpu_cursor = launch_at + ov.t4;
            if (k + 1 < op.kernel_calls.size()) cpu_cursor += ov.t5;
        }
        cpu_cursor += ov.t3;
        timeline.push_back({SimEvent::Kind::OpEnd, op_id, cpu_cursor});
    }

    double makespan = cpu_cursor;
    for (const auto& [stream, free_at] : stream_free) makespan = std::max(makespan, free_at);
    return makespan;
}

ShardingReport evaluate_sharding(const std::vector<EmbeddingParams>& tables,
                                 const std::vector<int>& assignment,
                                 const std::vector<HardwareSpec>& devices, ElVariant variant) {
    if (tables.empty()) throw Error("sharding: no tables");
    if (assignment.size() != tables.size())
        throw Error("sharding: assignment covers " + std::to_string(assignment.size()) +
                    " of " + std::to_string(tables.size()) + " tables");
    if (devices.empty()) throw Error("sharding: no devices");

    std::vector<std::vector<std::size_t>> by_device(devices.size());
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        const int dev = assignment[i];
        if (dev < 0 || static_cast<std::size_t>(dev) >= devices.size())
            throw Error("sharding: table " + std::to_string(i) + " assigned to unknown device " +
                        std::to_string(dev));
        by_device[static_cast<std::size_t>(dev)].push_back(i);
    }

    ShardingReport report;
    for (std::size_t dev = 0; dev < devices.size(); ++dev) {
        if (by_device[dev].empty()) {
            report.per_device_us.push_back(0.0);
            continue;
        }
        // Fuse the device's tables: T sums, E averages (floor), B/L/D must match.
        EmbeddingParams fused = tables[by_device[dev].front()];
        std::int64_t t_sum = 0;
        double e_sum = 0;
        for (std::size_t idx : by_device[dev]) {
            const EmbeddingParams& t = tables[idx];
            if (t.B != fused.B || t.L != fused.L || t.D != fused.D)
                throw Error("sharding: table " + std::to_string(idx) +
                            " has mismatched B/L/D on device " + std::to_string(dev));
            t_sum += t.T;
            e_sum += static_cast<double>(t.E);
        }
        fused.T = t_sum;
        fused.E = static_cast<std::int64_t>(e_sum / static_cast<double>(by_device[dev].size()));
        double us;
        if (variant == ElVariant::Enhanced) {
            us = el_enhanced(fused, devices[dev], ElDirection::Forward) +
                 el_enhanced(fused, devices[dev], ElDirection::Backward);
        } else {
            us = el_forward_plain(fused, devices[dev]) + el_backward_plain(fused, devices[dev]);
        }
        report.per_device_us.push_back(us);
    }

    const auto [min_it, max_it] =
        std::minmax_element(report.per_device_us.begin(), report.per_device_us.end());
    report.imbalance_ratio = *min_it > 0 ? *max_it / *min_it
                                         : std::numeric_limits<double>::infinity();
    return report;
}

PredictionErrorSummary compare_report(const PredictionReport& predicted,
                                      const BreakdownReport& measured,
                                      double measured_total_us) {
    if (!(measured.active_us > 0)) throw Error("compare: measured active time must be positive");
    if (!(measured_total_us > 0)) throw Error("compare: measured total time must be positive");
    PredictionErrorSummary summary;
    summary.active_rel_error =
        std::abs(predicted.gpu_active_us - measured.active_us) / measured.active_us;
    summary.total_rel_error =
        std::abs(predicted.total_us - measured_total_us) / measured_total_us;
    return summary;
}

std::string serialize_prediction_report(const PredictionReport& report) {
    json doc;
    doc["format_version"] = 1;
    doc["mode"] = prediction_mode_name(report.mode);
    doc["multi_stream"] = report.multi_stream;
    doc["total_us"] = round3(report.total_us);
    doc["cpu_time_us"] = round3(report.cpu_time_us);
    doc["gpu_active_us"] = round3(report.gpu_active_us);
    doc["gpu_idle_us"] = round3(report.gpu_idle_us);
    doc["book"] = report.book_id;
    doc["hardware"] = report.hardware;
    doc["per_op"] = json::array();
    for (const PerOpPrediction& row : report.per_op) {
        json rj;
        rj["id"] = row.op_id;
        rj["name"] = row.name;
        rj["stream"] = row.stream;
        rj["kernel_times_us"] = json::array();
        for (double t : row.kernel_times_us) rj["kernel_times_us"].push_back(round3(t));
        rj["overheads_us"] = {
            {"t1", round3(row.overheads.t1)}, {"t2", round3(row.overheads.t2)},
            {"t3", round3(row.overheads.t3)}, {"t4", round3(row.overheads.t4)},
            {"t5", round3(row.overheads.t5)},
        };
        rj["charges"] = {
            {"t1", row.charge_counts[0]}, {"t2", row.charge_counts[1]},
            {"t3", row.charge_counts[2]}, {"t4", row.charge_counts[3]},
            {"t5", row.charge_counts[4]},
        };
        doc["per_op"].push_back(std::move(rj));
    }
    return doc.dump(2) + "\n";
}

std::string format_prediction_table(const PredictionReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    out << "mode         " << prediction_mode_name(report.mode);
    if (report.multi_stream) out << " (multi-stream)";
    out << "\n";
    out << "total        " << std::setw(14) << report.total_us << " us\n";
    out << "cpu time     " << std::setw(14) << report.cpu_time_us << " us\n";
    out << "gpu active   " << std::setw(14) << report.gpu_active_us << " us\n";
    out << "gpu idle     " << std::setw(14) << report.gpu_idle_us << " us\n";
    out << "per-op (id, kernels us, overheads us):\n";
    for (const PerOpPrediction& row : report.per_op) {
        double kernels = 0;
        for (double t : row.kernel_times_us) kernels += t;
        out << "  " << std::setw(6) << row.op_id << "  " << std::setw(12) << kernels << "  "
            << std::setw(12) << row.overhead_total_us() << "  " << row.name << "\n";
    }
    return out.str();
}

std::string serialize_sharding_report(const ShardingReport& report) {
    json doc;
    doc["format_version"] = 1;
    doc["per_device_us"] = json::array();
    for (double us : report.per_device_us) doc["per_device_us"].push_back(round3(us));
    doc["imbalance_ratio"] = round3(report.imbalance_ratio);
    return doc.dump(2) + "\n";
}

}  // namespace perfmodel
