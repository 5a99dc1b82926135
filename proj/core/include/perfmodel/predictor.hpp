#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "perfmodel/graph.hpp"
#include "perfmodel/registry.hpp"
#include "perfmodel/trace.hpp"

namespace perfmodel {

/// Resolved per-op T1..T5 means in µs.
struct OverheadMeans {
    double t1 = 0, t2 = 0, t3 = 0, t4 = 0, t5 = 0;
    double get(OverheadType t) const;
};

/// Per-op-name overhead means with a fallback chain: op entry -> __global__
/// entry -> default (0 for T1/T2/T3/T5; t4_default for T4, approximating all
/// CUDA runtime functions).
class OverheadBook {
  public:
    OverheadBook() = default;

    /// Book with the same means for every op (no per-op entries).
    static OverheadBook constant(double t1, double t2, double t3, double t4, double t5);

    static OverheadBook from_table(const OverheadTable& table, std::string identifier = "");

    void set(const std::string& op_name, OverheadType type, double mean_us);
    OverheadMeans lookup(const std::string& op_name) const;

    double t4_default_us = 10.0;
    const std::string& identifier() const { return identifier_; }
    void set_identifier(std::string id) { identifier_ = std::move(id); }

  private:
    // value slot is unset when the source table had no samples for it
    std::map<std::string, std::array<std::optional<double>, 5>> per_op_;
    std::string identifier_;
};

OverheadBook parse_overhead_book(std::istream& in);
OverheadBook parse_overhead_book(const std::string& text);
OverheadBook load_overhead_book_file(const std::string& path);

enum class PredictionMode { Individual, Shared, KernelOnly };
const std::string& prediction_mode_name(PredictionMode mode);
PredictionMode prediction_mode_from_name(const std::string& name);

struct PredictOptions {
    PredictionMode mode = PredictionMode::Individual;
    /// Minimum serialization gap between consecutive kernels on one stream.
    double kernel_gap_us = 1.0;
    /// Track one GPU cursor per stream (required for parallelized graphs);
    /// off by default, in which case all kernels share a single timeline.
    bool multi_stream = false;
};

struct PerOpPrediction {
    std::int64_t op_id = 0;
    std::string name;
    int stream = 0;
    std::vector<double> kernel_times_us;
    OverheadMeans overheads;                  // means charged for this op
    std::array<int, 5> charge_counts = {0, 0, 0, 0, 0};  // how many times each type was charged
    double overhead_total_us() const;
};

struct PredictionReport {
    double total_us = 0;
    double cpu_time_us = 0;
    double gpu_active_us = 0;  // sum of predicted kernel times
    double gpu_idle_us = 0;    // total - gpu_active
    PredictionMode mode = PredictionMode::Individual;
    bool multi_stream = false;
    std::vector<PerOpPrediction> per_op;
    std::string book_id;
    std::string hardware;
};

/// Critical-path prediction: walks ops in graph order keeping CPU and GPU
/// cursors; each kernel starts no earlier than (previous kernel end + gap)
/// and (its launch time + T4/2). The result is max(gpu, cpu).
PredictionReport predict_e2e(const ExecutionGraph& g, const KernelModelRegistry& registry,
                             const OverheadBook& book, const HardwareSpec& hw,
                             const PredictOptions& options = {});

/// Sum of predicted kernel times with no overheads (the kernel_only baseline).
double predict_kernel_only(const ExecutionGraph& g, const KernelModelRegistry& registry,
                           const HardwareSpec& hw);

/// Full report in kernel_only mode: total equals the kernel-time sum and no
/// overheads are charged.
PredictionReport predict_kernel_only_report(const ExecutionGraph& g,
                                            const KernelModelRegistry& registry,
                                            const HardwareSpec& hw);

/// Discrete-event reference: materializes op/launch/kernel events on explicit
/// CPU and per-stream GPU timelines and returns the makespan. Independent
/// check of predict_e2e; the two must agree on every graph.
double simulate_reference(const ExecutionGraph& g, const KernelModelRegistry& registry,
                          const OverheadBook& book, const HardwareSpec& hw,
                          const PredictOptions& options = {});

struct ShardingReport {
    std::vector<double> per_device_us;  // fused EL forward+backward per device
    double imbalance_ratio = 1.0;       // max / min
};

/// Fuses the tables assigned to each device (mean E, summed T) and predicts
/// the embedding forward+backward time per device.
ShardingReport evaluate_sharding(const std::vector<EmbeddingParams>& tables,
                                 const std::vector<int>& assignment,
                                 const std::vector<HardwareSpec>& devices,
                                 ElVariant variant = ElVariant::Enhanced);

struct PredictionErrorSummary {
    double active_rel_error = 0;
    double total_rel_error = 0;
};

/// Relative errors of predicted GPU-active and E2E time against a measured
/// breakdown and total.
PredictionErrorSummary compare_report(const PredictionReport& predicted,
                                      const BreakdownReport& measured,
                                      double measured_total_us);

std::string serialize_prediction_report(const PredictionReport& report);
std::string format_prediction_table(const PredictionReport& report);
std::string serialize_sharding_report(const ShardingReport& report);

}  // namespace perfmodel
