#include "perfmodel/trace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <sstream>

#include "json.hpp"

namespace perfmodel {

using json = nlohmann::ordered_json;

namespace {

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

const std::string kCatNames[3] = {"op", "runtime", "kernel"};

EventCategory category_from_name(const std::string& cat, const std::string& context) {
    for (int i = 0; i < 3; ++i)
        if (kCatNames[i] == cat) return static_cast<EventCategory>(i);
    throw Error(context + ": unknown category \"" + cat + "\"");
}

}  // namespace

Trace parse_trace(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(std::string("trace parse: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("events"))
        throw Error("trace file: missing \"events\" array");
    Trace trace;
    trace.workload = doc.value("workload", std::string{});
    std::size_t idx = 0;
    for (const auto& ej : doc.at("events")) {
        const std::string ctx = "event #" + std::to_string(idx++);
        TraceEvent ev;
        if (!ej.contains("name")) throw Error(ctx + ": missing \"name\"");
        ev.name = ej.at("name").get<std::string>();
        if (ej.contains("cat")) {
            ev.cat = category_from_name(ej.at("cat").get<std::string>(), ctx);
        } else {
            // Fallback classification: CUDA runtime function names, else CPU op.
            ev.cat = ev.name.rfind("cuda", 0) == 0 ? EventCategory::Runtime
                                                   : EventCategory::CpuOp;
        }
        if (!ej.contains("ts")) throw Error(ctx + " (" + ev.name + "): missing \"ts\"");
        if (!ej.contains("dur")) throw Error(ctx + " (" + ev.name + "): missing \"dur\"");
        ev.ts = ej.at("ts").get<double>();
        ev.dur = ej.at("dur").get<double>();
        if (ev.dur < 0)
            throw Error(ctx + " (" + ev.name + "): negative dur " + std::to_string(ev.dur));
        ev.tid = ej.value("tid", std::int64_t{0});
        if (ej.contains("corr") && !ej.at("corr").is_null())
            ev.corr = ej.at("corr").get<std::int64_t>();
        if (ev.cat == EventCategory::Kernel && !ev.corr)
            throw Error(ctx + " (" + ev.name + "): kernel event lacks correlation id");
        trace.events.push_back(std::move(ev));
    }
    std::stable_sort(trace.events.begin(), trace.events.end(),
                     [](const TraceEvent& a, const TraceEvent& b) {
                         if (a.tid != b.tid) return a.tid < b.tid;
                         return a.ts < b.ts;
                     });
    return trace;
}

Trace parse_trace(const std::string& text) {
    std::istringstream in(text);
    return parse_trace(in);
}

Trace load_trace_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open trace file " + path);
    return parse_trace(in);
}

std::string serialize_trace(const Trace& t) {
    json doc;
    doc["workload"] = t.workload;
    doc["events"] = json::array();
    for (const TraceEvent& ev : t.events) {
        json ej;
        ej["name"] = ev.name;
        ej["cat"] = kCatNames[static_cast<int>(ev.cat)];
        ej["ts"] = ev.ts;
        ej["dur"] = ev.dur;
        ej["tid"] = ev.tid;
        if (ev.corr) ej["corr"] = *ev.corr;
        doc["events"].push_back(std::move(ej));
    }
    return doc.dump(2) + "\n";
}

SubtractStats subtract_profiler_overhead(std::vector<TraceEvent>& events, double cpu_overhead_us,
                                         double gpu_overhead_us) {
    SubtractStats stats;
    for (TraceEvent& ev : events) {
        const double oh = ev.cat == EventCategory::Kernel ? gpu_overhead_us : cpu_overhead_us;
        if (ev.dur < oh) {
            if (ev.cat == EventCategory::Kernel)
                ++stats.gpu_clamped;
            else
                ++stats.cpu_clamped;
            ev.dur = 0;
        } else {
            ev.dur -= oh;
        }
    }
    return stats;
}

EventTree build_event_tree(const std::vector<TraceEvent>& events) {
    std::vector<TraceEvent> sorted = events;
    std::stable_sort(sorted.begin(), sorted.end(), [](const TraceEvent& a, const TraceEvent& b) {
        if (a.tid != b.tid) return a.tid < b.tid;
        if (a.ts != b.ts) return a.ts < b.ts;
        return a.dur > b.dur;  // at equal start the longer event is the parent
    });

    EventTree tree;
    tree.nodes.reserve(sorted.size());
    std::vector<std::size_t> stack;  // node indices on the current thread
    std::int64_t current_tid = 0;
    bool first = true;
    for (TraceEvent& ev : sorted) {
        if (first || ev.tid != current_tid) {
            stack.clear();
            current_tid = ev.tid;
            first = false;
        }
        while (!stack.empty()) {
            const TraceEvent& top = tree.nodes[stack.back()].event;
            if (ev.ts >= top.end()) {
                stack.pop_back();
                continue;
            }
            if (ev.end() > top.end()) {
                std::ostringstream msg;
                msg << "malformed trace: events \"" << top.name << "\" [" << top.ts << ", "
                    << top.end() << "] and \"" << ev.name << "\" [" << ev.ts << ", " << ev.end()
                    << "] on thread " << ev.tid << " partially overlap";
                throw Error(msg.str());
            }
            break;  // contained in top
        }
        const std::size_t idx = tree.nodes.size();
        EventTree::Node node;
        node.event = ev;
        if (stack.empty()) {
            node.event.top_level = node.event.cat == EventCategory::CpuOp;
            tree.roots.push_back(idx);
        } else {
            node.parent = static_cast<std::ptrdiff_t>(stack.back());
            tree.nodes[stack.back()].children.push_back(idx);
        }
        tree.nodes.push_back(std::move(node));
        stack.push_back(idx);
    }
    return tree;
}

std::vector<TraceEvent> flatten_preorder(const EventTree& tree) {
    std::vector<TraceEvent> out;
    out.reserve(tree.nodes.size());
    auto visit = [&](auto&& self, std::size_t idx) -> void {
        out.push_back(tree.nodes[idx].event);
        for (std::size_t child : tree.nodes[idx].children) self(self, child);
    };
    for (std::size_t root : tree.roots) visit(visit, root);
    return out;
}

namespace {

/// Total length of the union of [start, end) intervals.
double interval_union_length(std::vector<std::pair<double, double>> intervals) {
    std::sort(intervals.begin(), intervals.end());
    double total = 0, cur_start = 0, cur_end = -1;
    bool open = false;
    for (const auto& [s, e] : intervals) {
        if (!open || s > cur_end) {
            if (open) total += cur_end - cur_start;
            cur_start = s;
            cur_end = e;
            open = true;
        } else {
            cur_end = std::max(cur_end, e);
        }
    }
    if (open) total += cur_end - cur_start;
    return total;
}

std::size_t top_level_ancestor(const EventTree& tree, std::size_t idx) {
    while (tree.nodes[idx].parent >= 0) idx = static_cast<std::size_t>(tree.nodes[idx].parent);
    return idx;
}

}  // namespace

BreakdownReport attribute_device_time(const EventTree& tree, bool deepest) {
    BreakdownReport report;
    if (tree.nodes.empty()) return report;

    double min_ts = tree.nodes.front().event.ts;
    double max_end = tree.nodes.front().event.end();
    for (const auto& node : tree.nodes) {
        min_ts = std::min(min_ts, node.event.ts);
        max_end = std::max(max_end, node.event.end());
    }
    report.total_span_us = max_end - min_ts;

    // Correlation id -> runtime launch node.
    std::map<std::int64_t, std::size_t> launch_by_corr;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const TraceEvent& ev = tree.nodes[i].event;
        if (ev.cat == EventCategory::Runtime && ev.corr) launch_by_corr.emplace(*ev.corr, i);
    }

    std::vector<std::pair<double, double>> kernel_intervals;
    std::map<std::int64_t, int> kernel_tids;
    double dur_sum = 0;
    for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
        const TraceEvent& ev = tree.nodes[i].event;
        if (ev.cat != EventCategory::Kernel) continue;
        kernel_intervals.push_back({ev.ts, ev.end()});
        ++kernel_tids[ev.tid];
        dur_sum += ev.dur;

        auto it = ev.corr ? launch_by_corr.find(*ev.corr) : launch_by_corr.end();
        if (it == launch_by_corr.end()) {
            report.unattributed_us += ev.dur;
            continue;
        }
        std::size_t launch = it->second;
        std::size_t owner = launch;
        if (deepest) {
            while (tree.nodes[owner].parent >= 0 &&
                   tree.nodes[owner].event.cat != EventCategory::CpuOp)
                owner = static_cast<std::size_t>(tree.nodes[owner].parent);
        } else {
            owner = top_level_ancestor(tree, launch);
        }
        if (tree.nodes[owner].event.cat != EventCategory::CpuOp) {
            report.unattributed_us += ev.dur;
            continue;
        }
        report.per_op_us[tree.nodes[owner].event.name] += ev.dur;
    }

    report.active_us = interval_union_length(std::move(kernel_intervals));
    report.idle_us = report.total_span_us - report.active_us;
    report.multi_stream =
        kernel_tids.size() > 1 || dur_sum > report.active_us + 1e-9 * std::max(1.0, dur_sum);

    report.ranked.assign(report.per_op_us.begin(), report.per_op_us.end());
    std::sort(report.ranked.begin(), report.ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return report;
}

std::string serialize_breakdown(const BreakdownReport& report) {
    json doc;
    doc["format_version"] = 1;
    doc["total_span_us"] = round3(report.total_span_us);
    doc["active_us"] = round3(report.active_us);
    doc["idle_us"] = round3(report.idle_us);
    doc["unattributed_us"] = round3(report.unattributed_us);
    doc["multi_stream"] = report.multi_stream;
    doc["per_op_us"] = json::object();
    for (const auto& [name, us] : report.ranked) doc["per_op_us"][name] = round3(us);
    return doc.dump(2) + "\n";
}

std::string format_breakdown_table(const BreakdownReport& report) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(3);
    out << "total span   " << std::setw(14) << report.total_span_us << " us\n";
    out << "gpu active   " << std::setw(14) << report.active_us << " us\n";
    out << "gpu idle     " << std::setw(14) << report.idle_us << " us\n";
    if (report.unattributed_us > 0)
        out << "unattributed " << std::setw(14) << report.unattributed_us << " us\n";
    if (report.multi_stream) out << "multi-stream kernels detected\n";
    out << "per-op device time:\n";
    for (const auto& [name, us] : report.ranked)
        out << "  " << std::setw(12) << us << " us  " << name << "\n";
    return out.str();
}

const std::string& overhead_type_name(OverheadType t) {
    static const std::string names[5] = {"t1", "t2", "t3", "t4", "t5"};
    return names[static_cast<int>(t)];
}

ExtractResult extract_overheads(const EventTree& tree, const std::string& workload) {
    ExtractResult result;
    auto clamp = [&result](double v) {
        if (v < 0) {
            ++result.clamped;
            return 0.0;
        }
        return v;
    };
    auto add = [&](OverheadType type, const std::string& op, double value) {
        result.samples.push_back(OverheadSample{type, op, clamp(value), workload});
    };

    // Runtime launches inside one op subtree, in ts order (pre-order visit of
    // ts-ordered children yields ascending ts).
    auto collect_launches = [&tree](std::size_t root) {
        std::vector<const TraceEvent*> launches;
        auto visit = [&](auto&& self, std::size_t idx) -> void {
            const auto& node = tree.nodes[idx];
            if (node.event.cat == EventCategory::Runtime) launches.push_back(&node.event);
            for (std::size_t child : node.children) self(self, child);
        };
        visit(visit, root);
        return launches;
    };

    // Top-level CPU ops per thread, in ts order.
    std::map<std::int64_t, std::vector<std::size_t>> tops_by_tid;
    for (std::size_t root : tree.roots) {
        const TraceEvent& ev = tree.nodes[root].event;
        if (ev.cat == EventCategory::CpuOp) tops_by_tid[ev.tid].push_back(root);
    }

    for (const auto& [tid, tops] : tops_by_tid) {
        for (std::size_t i = 0; i < tops.size(); ++i) {
            const TraceEvent& op = tree.nodes[tops[i]].event;
            if (i + 1 < tops.size()) {
                const TraceEvent& next = tree.nodes[tops[i + 1]].event;
                add(OverheadType::T1, next.name, next.ts - op.end());
            }
            auto launches = collect_launches(tops[i]);
            if (launches.empty()) continue;  // kernel-less op: only T1
            add(OverheadType::T2, op.name, launches.front()->ts - op.ts);
            add(OverheadType::T3, op.name, op.end() - launches.back()->end());
            for (const TraceEvent* launch : launches)
                add(OverheadType::T4, op.name, launch->dur);
            for (std::size_t k = 0; k + 1 < launches.size(); ++k)
                add(OverheadType::T5, op.name, launches[k + 1]->ts - launches[k]->end());
        }
    }
    return result;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw Error("quantile of empty sample");
    if (sorted.size() == 1) return sorted.front();
    const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= sorted.size()) return sorted.back();
    const double frac = h - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

namespace {

OverheadGroupStats iqr_stats(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const double q1 = quantile_sorted(values, 0.25);
    const double q3 = quantile_sorted(values, 0.75);
    const double iqr = q3 - q1;
    const double lo = q1 - 1.5 * iqr;
    const double hi = q3 + 1.5 * iqr;

    OverheadGroupStats stats;
    double sum = 0;
    std::vector<double> kept;
    kept.reserve(values.size());
    for (double v : values) {
        if (v < lo || v > hi) {
            ++stats.removed;
            continue;
        }
        kept.push_back(v);
        sum += v;
    }
    stats.count = kept.size();
    if (!kept.empty()) {
        stats.mean = sum / static_cast<double>(kept.size());
        double ss = 0;
        for (double v : kept) ss += (v - stats.mean) * (v - stats.mean);
        stats.stddev = std::sqrt(ss / static_cast<double>(kept.size()));
    }
    return stats;
}

}  // namespace

OverheadStats summarize_overheads(const std::vector<OverheadSample>& samples, bool per_workload) {
    // (workload, op, type) -> values; op "__global__" pools all ops.
    std::map<std::string, std::map<std::string, std::array<std::vector<double>, 5>>> groups;
    for (const OverheadSample& s : samples) {
        const std::string& wl = per_workload ? s.workload : std::string{};
        const int t = static_cast<int>(s.type);
        groups[wl][s.op_name][t].push_back(s.value_us);
        groups[wl]["__global__"][t].push_back(s.value_us);
    }
    OverheadStats stats;
    for (auto& [wl, ops] : groups) {
        OverheadTable& table = stats.by_workload[wl];
        for (auto& [op, by_type] : ops) {
            auto& slots = table[op];
            for (int t = 0; t < kOverheadTypeCount; ++t)
                if (!by_type[t].empty()) slots[t] = iqr_stats(std::move(by_type[t]));
        }
    }
    return stats;
}

std::string serialize_overhead_table(const OverheadTable& table, const std::string& workload) {
    json doc;
    doc["format_version"] = 1;
    doc["workload"] = workload;
    doc["ops"] = json::object();
    for (const auto& [op, slots] : table) {
        json oj = json::object();
        for (int t = 0; t < kOverheadTypeCount; ++t) {
            if (!slots[t]) continue;
            json sj;
            sj["mean"] = round3(slots[t]->mean);
            sj["std"] = round3(slots[t]->stddev);
            sj["count"] = slots[t]->count;
            oj[overhead_type_name(static_cast<OverheadType>(t))] = std::move(sj);
        }
        doc["ops"][op] = std::move(oj);
    }
    return doc.dump(2) + "\n";
}

}  // namespace perfmodel
