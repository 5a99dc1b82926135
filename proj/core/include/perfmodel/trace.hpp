#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "perfmodel/error.hpp"

namespace perfmodel {

enum class EventCategory { CpuOp, Runtime, Kernel };

/// One flattened profiler event. Times are microseconds.
struct TraceEvent {
    std::string name;
    EventCategory cat = EventCategory::CpuOp;
    double ts = 0;
    double dur = 0;
    std::int64_t tid = 0;
    std::optional<std::int64_t> corr;  // links RUNTIME launch <-> KERNEL
    bool top_level = false;            // set during tree build

    double end() const { return ts + dur; }
    bool operator==(const TraceEvent&) const = default;
};

struct Trace {
    std::string workload;
    std::vector<TraceEvent> events;
};

Trace parse_trace(std::istream& in);
Trace parse_trace(const std::string& text);
Trace load_trace_file(const std::string& path);
std::string serialize_trace(const Trace& t);

struct SubtractStats {
    std::int64_t cpu_clamped = 0;
    std::int64_t gpu_clamped = 0;
};

/// Removes per-event profiler cost: CPU_OP/RUNTIME durations shrink by
/// `cpu_overhead_us`, KERNEL durations by `gpu_overhead_us`, floored at 0.
/// Start times are unchanged. Returns how many durations were clamped.
SubtractStats subtract_profiler_overhead(std::vector<TraceEvent>& events,
                                         double cpu_overhead_us = 2.0,
                                         double gpu_overhead_us = 4.0);

/// Containment forest reconstructing each op's calling stack.
struct EventTree {
    struct Node {
        TraceEvent event;
        std::vector<std::size_t> children;  // ordered by ts
        std::ptrdiff_t parent = -1;
    };
    std::vector<Node> nodes;
    std::vector<std::size_t> roots;  // in (tid, ts) order
};

EventTree build_event_tree(const std::vector<TraceEvent>& events);

/// Pre-order flattening; reproduces the input event multiset.
std::vector<TraceEvent> flatten_preorder(const EventTree& tree);

struct BreakdownReport {
    double total_span_us = 0;
    double active_us = 0;  // union of kernel intervals
    double idle_us = 0;    // total_span - active
    std::map<std::string, double> per_op_us;
    std::vector<std::pair<std::string, double>> ranked;  // descending
    double unattributed_us = 0;
    bool multi_stream = false;
};

/// Credits each kernel's duration to the top-level CPU op that launched it
/// (deepest enclosing op instead when `deepest` is set).
BreakdownReport attribute_device_time(const EventTree& tree, bool deepest = false);

std::string serialize_breakdown(const BreakdownReport& report);
std::string format_breakdown_table(const BreakdownReport& report);

enum class OverheadType { T1, T2, T3, T4, T5 };
constexpr int kOverheadTypeCount = 5;
const std::string& overhead_type_name(OverheadType t);  // "t1".."t5"

struct OverheadSample {
    OverheadType type = OverheadType::T1;
    std::string op_name;
    double value_us = 0;
    std::string workload;
};

struct ExtractResult {
    std::vector<OverheadSample> samples;
    std::int64_t clamped = 0;  // negative gaps floored at 0
};

/// Walks top-level ops and their runtime launches, producing T1..T5 samples.
/// T1 gaps are labeled with the *following* op's name.
ExtractResult extract_overheads(const EventTree& tree, const std::string& workload = "");

struct OverheadGroupStats {
    std::size_t count = 0;  // samples retained after outlier removal
    double mean = 0;
    double stddev = 0;
    std::size_t removed = 0;
};

/// Per op name, one optional stats slot per overhead type (absent when the
/// group had no samples). "__global__" aggregates all ops per type.
using OverheadTable = std::map<std::string, std::array<std::optional<OverheadGroupStats>, 5>>;

/// Keyed by workload tag; the pooled variant (per_workload = false) uses "".
struct OverheadStats {
    std::map<std::string, OverheadTable> by_workload;
};

/// IQR outlier removal per (type, op_name) group: drop samples outside
/// [Q1 - 1.5 IQR, Q3 + 1.5 IQR] (linear-interpolation quartiles), then mean,
/// population stddev, and count of the rest.
OverheadStats summarize_overheads(const std::vector<OverheadSample>& samples, bool per_workload);

/// Linear-interpolation ("type 7") quantile of an ascending-sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double p);

std::string serialize_overhead_table(const OverheadTable& table, const std::string& workload);

}  // namespace perfmodel
