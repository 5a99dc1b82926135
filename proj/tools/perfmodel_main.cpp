// perfmodel CLI: trace breakdown, overhead extraction, regressor training,
// end-to-end prediction, graph what-ifs, and embedding-shard evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "perfmodel/bench_data.hpp"
#include "perfmodel/graph.hpp"
#include "perfmodel/hardware.hpp"
#include "perfmodel/mlp.hpp"
#include "perfmodel/predictor.hpp"
#include "perfmodel/registry.hpp"
#include "perfmodel/trace.hpp"

namespace {

using perfmodel::Error;
using json = nlohmann::ordered_json;

void write_output(const std::string& path, const std::string& payload) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open output file " + path);
    out << payload;
    if (!out) throw Error("failed writing " + path);
}

/// JSON goes to --out when given (human summary on stdout), else to stdout.
void emit(const std::string& out_path, const std::string& payload,
          const std::string& human = "") {
    if (out_path.empty()) {
        std::cout << payload;
    } else {
        write_output(out_path, payload);
        if (!human.empty()) std::cout << human;
    }
}

struct OverheadFlags {
    double cpu_us = 2.0;
    double gpu_us = 4.0;
};

void add_overhead_flags(CLI::App* cmd, OverheadFlags& flags) {
    cmd->add_option("--cpu-overhead-us", flags.cpu_us,
                    "Profiler overhead subtracted from CPU-side events");
    cmd->add_option("--gpu-overhead-us", flags.gpu_us,
                    "Profiler overhead subtracted from kernel events");
}

int cmd_breakdown(const std::string& trace_path, const std::string& out_path,
                  const OverheadFlags& oh, bool deepest) {
    perfmodel::Trace trace = perfmodel::load_trace_file(trace_path);
    perfmodel::subtract_profiler_overhead(trace.events, oh.cpu_us, oh.gpu_us);
    perfmodel::EventTree tree = perfmodel::build_event_tree(trace.events);
    perfmodel::BreakdownReport report = perfmodel::attribute_device_time(tree, deepest);
    emit(out_path, perfmodel::serialize_breakdown(report),
         perfmodel::format_breakdown_table(report));
    return 0;
}

int cmd_overheads(const std::vector<std::string>& trace_paths, const std::string& out_path,
                  const OverheadFlags& oh, bool shared) {
    std::vector<perfmodel::OverheadSample> samples;
    std::int64_t clamped = 0;
    for (const std::string& path : trace_paths) {
        perfmodel::Trace trace = perfmodel::load_trace_file(path);
        perfmodel::subtract_profiler_overhead(trace.events, oh.cpu_us, oh.gpu_us);
        std::string workload = trace.workload;
        if (workload.empty()) workload = std::filesystem::path(path).stem().string();
        perfmodel::ExtractResult extracted =
            perfmodel::extract_overheads(perfmodel::build_event_tree(trace.events), workload);
        clamped += extracted.clamped;
        samples.insert(samples.end(), extracted.samples.begin(), extracted.samples.end());
    }
    if (clamped > 0) std::cerr << "note: clamped " << clamped << " negative gaps to 0\n";

    perfmodel::OverheadStats stats = perfmodel::summarize_overheads(samples, !shared);
    if (shared || stats.by_workload.size() == 1) {
        const auto& [workload, table] = *stats.by_workload.begin();
        emit(out_path, perfmodel::serialize_overhead_table(table, shared ? "shared" : workload));
        return 0;
    }
    // several workloads, per-workload books: suffix the output path
    if (out_path.empty())
        throw Error("multiple workloads without --shared require --out to name the files");
    const std::filesystem::path base(out_path);
    for (const auto& [workload, table] : stats.by_workload) {
        std::filesystem::path path = base;
        path.replace_filename(base.stem().string() + "." + workload +
                              base.extension().string());
        write_output(path.string(), perfmodel::serialize_overhead_table(table, workload));
        std::cerr << "wrote " << path.string() << "\n";
    }
    return 0;
}

perfmodel::SearchSpace space_from_flags(std::vector<int> layers, std::vector<int> widths,
                                        std::vector<std::string> optimizers,
                                        std::vector<double> lrs) {
    perfmodel::SearchSpace space;
    space.num_layers = layers.empty() ? std::vector<int>{3} : std::move(layers);
    space.widths = widths.empty() ? std::vector<int>{128} : std::move(widths);
    if (optimizers.empty()) {
        space.optimizers = {perfmodel::Optimizer::Adam};
    } else {
        for (const auto& name : optimizers)
            space.optimizers.push_back(perfmodel::optimizer_from_name(name));
    }
    space.learning_rates = lrs.empty() ? std::vector<double>{1e-3} : std::move(lrs);
    return space;
}

std::string leaderboard_json(const perfmodel::GridSearchResult& result) {
    json doc;
    doc["format_version"] = 1;
    doc["entries"] = json::array();
    for (const auto& entry : result.leaderboard) {
        json ej;
        ej["num_layers"] = entry.config.num_layers;
        ej["width"] = entry.config.width;
        ej["optimizer"] = perfmodel::optimizer_name(entry.config.optimizer);
        ej["learning_rate"] = entry.config.learning_rate;
        ej["seed"] = entry.config.seed;
        if (entry.failure.empty())
            ej["validation_gmae"] = entry.validation_gmae;
        else
            ej["failure"] = entry.failure;
        doc["entries"].push_back(std::move(ej));
    }
    return doc.dump(2) + "\n";
}

int cmd_train(const std::string& dataset_path, const std::string& kind_name,
              const perfmodel::SearchSpace& space, perfmodel::TrainConfig base,
              double train_fraction, const std::string& out_path,
              const std::string& leaderboard_path, unsigned threads) {
    const perfmodel::KernelKind kind = perfmodel::kernel_kind_from_name(kind_name);
    std::vector<perfmodel::BenchRecord> records = perfmodel::load_dataset_file(dataset_path);
    for (const auto& rec : records)
        if (rec.kind != kind)
            throw Error("dataset contains kind " + perfmodel::kernel_kind_name(rec.kind) +
                        ", expected " + kind_name);
    auto [train, val] = perfmodel::split_dataset(records, train_fraction, base.seed);
    perfmodel::GridSearchResult result =
        perfmodel::grid_search(train, val, kind, space, base, threads);

    std::cerr << "best: " << result.best_config.describe()
              << " gmae=" << result.leaderboard.front().validation_gmae << "\n";
    emit(out_path, perfmodel::serialize_regressor(result.best));
    if (!leaderboard_path.empty()) write_output(leaderboard_path, leaderboard_json(result));
    return 0;
}

int cmd_predict(const std::string& graph_path, const std::string& hw_path,
                const std::string& book_path, const std::vector<std::string>& regressor_paths,
                const std::string& mode_name, const std::string& el_model, bool multi_stream,
                double gap_us, const std::string& out_path) {
    perfmodel::ExecutionGraph g = perfmodel::load_graph_file(graph_path);
    perfmodel::HardwareSpec hw = perfmodel::load_hardware_file(hw_path);
    perfmodel::KernelModelRegistry registry =
        perfmodel::KernelModelRegistry::make_default(perfmodel::el_variant_from_name(el_model));
    for (const std::string& path : regressor_paths)
        registry.set_regressor(perfmodel::load_regressor_file(path));

    const perfmodel::PredictionMode mode = perfmodel::prediction_mode_from_name(mode_name);
    perfmodel::PredictionReport report;
    if (mode == perfmodel::PredictionMode::KernelOnly) {
        report = perfmodel::predict_kernel_only_report(g, registry, hw);
    } else {
        if (book_path.empty()) throw Error("predict: --book is required unless kernel_only");
        perfmodel::OverheadBook book = perfmodel::load_overhead_book_file(book_path);
        perfmodel::PredictOptions options;
        options.mode = mode;
        options.multi_stream = multi_stream;
        options.kernel_gap_us = gap_us;
        report = perfmodel::predict_e2e(g, registry, book, hw, options);
    }
    emit(out_path, perfmodel::serialize_prediction_report(report),
         perfmodel::format_prediction_table(report));
    return 0;
}

int cmd_transform(const std::string& graph_path, const std::string& script_path,
                  const std::string& out_path) {
    perfmodel::ExecutionGraph g = perfmodel::load_graph_file(graph_path);
    std::ifstream script(script_path);
    if (!script) throw Error("cannot open edit script " + script_path);
    for (const perfmodel::GraphEdit& edit : perfmodel::parse_edit_script(script))
        g = perfmodel::transform(g, edit);
    emit(out_path, perfmodel::serialize_graph(g));
    return 0;
}

int cmd_shard_eval(const std::string& tables_path, const std::string& assignment_path,
                   const std::vector<std::string>& hw_paths, const std::string& el_model,
                   const std::string& out_path) {
    std::ifstream tables_in(tables_path);
    if (!tables_in) throw Error("cannot open tables file " + tables_path);
    json tables_doc;
    try {
        tables_doc = json::parse(tables_in);
    } catch (const json::exception& e) {
        throw Error(std::string("tables parse: ") + e.what());
    }
    if (!tables_doc.contains("tables")) throw Error("tables file: missing \"tables\" array");
    std::vector<perfmodel::EmbeddingParams> tables;
    for (const auto& tj : tables_doc.at("tables")) {
        perfmodel::EmbeddingParams p;
        p.B = tj.at("B").get<std::int64_t>();
        p.E = tj.at("E").get<std::int64_t>();
        p.T = tj.value("T", std::int64_t{1});
        p.L = tj.at("L").get<std::int64_t>();
        p.D = tj.at("D").get<std::int64_t>();
        p.rows_per_block = tj.at("rows_per_block").get<std::int64_t>();
        p.element_bytes = tj.value("element_bytes", std::int64_t{4});
        p.validate();
        tables.push_back(p);
    }

    std::ifstream assign_in(assignment_path);
    if (!assign_in) throw Error("cannot open assignment file " + assignment_path);
    json assign_doc;
    try {
        assign_doc = json::parse(assign_in);
    } catch (const json::exception& e) {
        throw Error(std::string("assignment parse: ") + e.what());
    }
    if (!assign_doc.contains("assignment"))
        throw Error("assignment file: missing \"assignment\" array");
    const auto assignment = assign_doc.at("assignment").get<std::vector<int>>();

    std::vector<perfmodel::HardwareSpec> devices;
    for (const std::string& path : hw_paths)
        devices.push_back(perfmodel::load_hardware_file(path));

    perfmodel::ShardingReport report = perfmodel::evaluate_sharding(
        tables, assignment, devices, perfmodel::el_variant_from_name(el_model));
    std::ostringstream human;
    human << std::fixed << std::setprecision(3);
    for (std::size_t d = 0; d < report.per_device_us.size(); ++d)
        human << "device " << d << "  " << report.per_device_us[d] << " us\n";
    human << "imbalance ratio " << report.imbalance_ratio << "\n";
    emit(out_path, perfmodel::serialize_sharding_report(report), human.str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GPU training-time prediction from execution graphs"};
    app.require_subcommand(1);

    std::string out_path;
    std::string hw_path;
    std::string el_model = "enhanced";
    std::uint64_t seed = 0;

    // breakdown
    auto* breakdown = app.add_subcommand("breakdown", "Device time breakdown of a trace");
    std::string breakdown_trace;
    bool deepest = false;
    OverheadFlags breakdown_oh;
    breakdown->add_option("trace", breakdown_trace, "Trace file")->required();
    breakdown->add_option("--out", out_path, "Write the JSON report here");
    breakdown->add_flag("--deepest", deepest, "Attribute kernels to the deepest enclosing op");
    add_overhead_flags(breakdown, breakdown_oh);

    // overheads
    auto* overheads = app.add_subcommand("overheads", "Extract T1..T5 overhead books");
    std::vector<std::string> overhead_traces;
    bool shared = false;
    OverheadFlags overheads_oh;
    overheads->add_option("traces", overhead_traces, "Trace files")->required();
    overheads->add_flag("--shared", shared, "Pool samples across workloads into one book");
    overheads->add_option("--out", out_path, "Write the book(s) here");
    add_overhead_flags(overheads, overheads_oh);

    // train
    auto* train = app.add_subcommand("train", "Grid-search an MLP kernel regressor");
    std::string dataset_path, kind_name, leaderboard_path;
    std::vector<int> layers, widths;
    std::vector<std::string> optimizers;
    std::vector<double> lrs;
    perfmodel::TrainConfig base;
    double train_fraction = 0.8;
    unsigned threads = 0;
    train->add_option("dataset", dataset_path, "Benchmark CSV")->required();
    train->add_option("--kind", kind_name, "Kernel kind, e.g. GEMM")->required();
    train->add_option("--layers", layers, "Hidden layer counts")->delimiter(',');
    train->add_option("--widths", widths, "Hidden layer widths")->delimiter(',');
    train->add_option("--optimizers", optimizers, "adam,sgd")->delimiter(',');
    train->add_option("--lrs", lrs, "Learning rates")->delimiter(',');
    train->add_option("--epochs", base.epochs, "Training epochs per configuration");
    train->add_option("--batch", base.batch_size, "Mini-batch size");
    train->add_option("--train-fraction", train_fraction, "Train split fraction");
    train->add_option("--seed", seed, "Deterministic seed");
    train->add_option("--threads", threads, "Parallel configurations (0 = auto)");
    train->add_option("--out", out_path, "Write the best regressor here");
    train->add_option("--leaderboard", leaderboard_path, "Write the full leaderboard here");

    // predict
    auto* predict = app.add_subcommand("predict", "Predict per-batch training time");
    std::string graph_path, book_path, mode_name = "individual";
    std::vector<std::string> regressor_paths;
    bool multi_stream = false;
    double gap_us = 1.0;
    predict->add_option("--graph", graph_path, "Execution graph file")->required();
    predict->add_option("--hw", hw_path, "Hardware spec file")->required();
    predict->add_option("--book", book_path, "Overhead book file");
    predict->add_option("--regressor", regressor_paths, "Trained regressor file (repeatable)");
    predict->add_option("--mode", mode_name, "individual|shared|kernel_only");
    predict->add_option("--el-model", el_model, "plain|enhanced embedding model");
    predict->add_flag("--multi-stream", multi_stream, "Track one GPU cursor per stream");
    predict->add_option("--gap-us", gap_us, "Minimum inter-kernel serialization gap");
    predict->add_option("--out", out_path, "Write the JSON report here");

    // transform
    auto* transform_cmd = app.add_subcommand("transform", "Apply a what-if edit script");
    std::string script_path;
    transform_cmd->add_option("--graph", graph_path, "Execution graph file")->required();
    transform_cmd->add_option("--script", script_path, "Edit script file")->required();
    transform_cmd->add_option("--out", out_path, "Write the transformed graph here");

    // shard-eval
    auto* shard = app.add_subcommand("shard-eval", "Evaluate an embedding-table sharding");
    std::string tables_path, assignment_path;
    std::vector<std::string> hw_paths;
    shard->add_option("--tables", tables_path, "Embedding tables file")->required();
    shard->add_option("--assignment", assignment_path, "Table-to-device assignment file")
        ->required();
    shard->add_option("--hw", hw_paths, "Hardware spec per device (repeat per device)")
        ->required();
    shard->add_option("--el-model", el_model, "plain|enhanced embedding model");
    shard->add_option("--out", out_path, "Write the JSON report here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*breakdown) return cmd_breakdown(breakdown_trace, out_path, breakdown_oh, deepest);
        if (*overheads) return cmd_overheads(overhead_traces, out_path, overheads_oh, shared);
        if (*train) {
            base.seed = seed;
            return cmd_train(dataset_path, kind_name,
                             space_from_flags(layers, widths, optimizers, lrs), base,
                             train_fraction, out_path, leaderboard_path, threads);
        }
        if (*predict)
            return cmd_predict(graph_path, hw_path, book_path, regressor_paths, mode_name,
                               el_model, multi_stream, gap_us, out_path);
        if (*transform_cmd) return cmd_transform(graph_path, script_path, out_path);
        if (*shard) return cmd_shard_eval(tables_path, assignment_path, hw_paths, el_model,
                                          out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
