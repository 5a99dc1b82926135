#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "perfmodel/bench_data.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

const fs::path kCli = PERFMODEL_CLI_PATH;
const fs::path kData = PERFMODEL_DATA_DIR;
const fs::path kGolden = PERFMODEL_GOLDEN_DIR;

fs::path work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "perfmodel_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

RunResult run(const std::string& args) {
    const fs::path out_file = work_dir() / "stdout.txt";
    const fs::path err_file = work_dir() / "stderr.txt";
    const std::string cmd = kCli.string() + " " + args + " > " + out_file.string() + " 2> " +
                            err_file.string();
    const int status = std::system(cmd.c_str());
    RunResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.out = slurp(out_file);
    result.err = slurp(err_file);
    return result;
}

std::string data(const char* name) { return (kData / name).string(); }

}  // namespace

TEST_CASE("cli breakdown is byte-stable and matches the golden file") {
    const fs::path out_a = work_dir() / "breakdown_a.json";
    const fs::path out_b = work_dir() / "breakdown_b.json";
    RunResult a = run("breakdown " + data("trace_small.json") + " --out " + out_a.string());
    RunResult b = run("breakdown " + data("trace_small.json") + " --out " + out_b.string());
    CHECK(a.exit_code == 0);
    CHECK(b.exit_code == 0);
    CHECK(slurp(out_a) == slurp(out_b));
    CHECK(slurp(out_a) == slurp(kGolden / "breakdown_small.json"));
    CHECK(a.out.find("gpu active") != std::string::npos);  // human summary on stdout
}

TEST_CASE("cli overheads matches the golden book") {
    const fs::path out = work_dir() / "overheads.json";
    RunResult r = run("overheads " + data("trace_small.json") + " --out " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(slurp(out) == slurp(kGolden / "overheads_small.json"));
}

TEST_CASE("cli overheads without traces is a usage error") {
    RunResult r = run("overheads");
    CHECK(r.exit_code != 0);
    CHECK(!r.err.empty());
}

TEST_CASE("cli predict matches the golden report and is repeatable") {
    const std::string base = "predict --graph " + data("graph_predict.json") + " --hw " +
                             data("hw_v100.json") + " --book " + data("book_small.json");
    const fs::path out_a = work_dir() / "predict_a.json";
    const fs::path out_b = work_dir() / "predict_b.json";
    CHECK(run(base + " --out " + out_a.string()).exit_code == 0);
    CHECK(run(base + " --out " + out_b.string()).exit_code == 0);
    CHECK(slurp(out_a) == slurp(out_b));
    CHECK(slurp(out_a) == slurp(kGolden / "predict_small.json"));
}

TEST_CASE("cli predict kernel_only reports only device-active time") {
    const fs::path out = work_dir() / "kernel_only.json";
    RunResult r = run("predict --graph " + data("graph_predict.json") + " --hw " +
                      data("hw_v100.json") + " --mode kernel_only --out " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(slurp(out) == slurp(kGolden / "predict_kernel_only.json"));
    const json doc = json::parse(slurp(out));
    CHECK(doc.at("total_us") == doc.at("gpu_active_us"));
}

TEST_CASE("cli predict fails when a bound kind has no regressor") {
    // a graph with a GEMM kernel but no --regressor
    const fs::path graph = work_dir() / "gemm_graph.json";
    std::ofstream(graph) << R"({
      "format_version": 1,
      "tensors": {"1": {"dims": [8, 8]}},
      "ops": [{"id": 1, "name": "addmm", "inputs": [1], "outputs": [],
               "kernel_calls": [{"kind": "GEMM",
                 "params": {"batch": 1, "M": 8, "N": 8, "K": 8}}]}],
      "edges": [],
      "order": [1]
    })";
    RunResult r = run("predict --graph " + graph.string() + " --hw " + data("hw_v100.json") +
                      " --book " + data("book_small.json"));
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("GEMM") != std::string::npos);
}

TEST_CASE("cli transform fuse script drops seven ops") {
    const fs::path out = work_dir() / "fused.json";
    RunResult r = run("transform --graph " + data("graph_embeddings8.json") + " --script " +
                      data("edits_fuse.json") + " --out " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(slurp(out) == slurp(kGolden / "graph_fused.json"));
    const json doc = json::parse(slurp(out));
    CHECK(doc.at("ops").size() == 1);
}

TEST_CASE("cli transform resize propagates dims into the output file") {
    const fs::path out = work_dir() / "resized.json";
    RunResult r = run("transform --graph " + data("graph_predict.json") + " --script " +
                      data("edits_resize.json") + " --out " + out.string());
    CHECK(r.exit_code == 0);
    const json doc = json::parse(slurp(out));
    for (const auto& [id, tensor] : doc.at("tensors").items())
        CHECK(tensor.at("dims")[0] == 512);
    // axis-bound embedding batch param follows the resize
    CHECK(doc.at("ops")[0].at("kernel_calls")[0].at("params").at("B") == 512);
}

TEST_CASE("cli transform rejects an invalid edit with a message") {
    const fs::path script = work_dir() / "bad_edit.json";
    std::ofstream(script) << R"({"edits": [{"kind": "remove", "op": 999}]})";
    RunResult r = run("transform --graph " + data("graph_predict.json") + " --script " +
                      script.string() + " --out " + (work_dir() / "na.json").string());
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("999") != std::string::npos);
}

TEST_CASE("cli shard-eval golden and symmetric split") {
    const fs::path out = work_dir() / "shard.json";
    const std::string hw = " --hw " + data("hw_v100.json") + " --hw " + data("hw_v100.json");
    RunResult skew = run("shard-eval --tables " + data("tables8.json") + " --assignment " +
                         data("assign_6_2.json") + hw + " --out " + out.string());
    CHECK(skew.exit_code == 0);
    CHECK(slurp(out) == slurp(kGolden / "shard_6_2.json"));

    RunResult even = run("shard-eval --tables " + data("tables8.json") + " --assignment " +
                         data("assign_4_4.json") + hw + " --out " + out.string());
    CHECK(even.exit_code == 0);
    CHECK(json::parse(slurp(out)).at("imbalance_ratio") == 1.0);

    RunResult missing = run("shard-eval --tables " + data("tables8.json") + hw);
    CHECK(missing.exit_code != 0);
}

TEST_CASE("cli train produces a regressor and leaderboard") {
    const fs::path csv = work_dir() / "gemm.csv";
    std::ofstream(csv) << perfmodel::serialize_dataset(
        perfmodel::synth_generate(perfmodel::KernelKind::Gemm, 800, 2.0, 5));
    const fs::path model = work_dir() / "gemm_model.json";
    const fs::path board = work_dir() / "leaderboard.json";
    RunResult r = run("train " + csv.string() +
                      " --kind GEMM --layers 3 --widths 128 --optimizers adam --lrs 5e-3"
                      " --epochs 60 --batch 64 --seed 7 --threads 1 --out " +
                      model.string() + " --leaderboard " + board.string());
    CHECK(r.exit_code == 0);
    const json model_doc = json::parse(slurp(model));
    CHECK(model_doc.at("kind") == "GEMM");
    CHECK(model_doc.at("validation_gmae").get<double>() < 0.10);
    const json board_doc = json::parse(slurp(board));
    CHECK(board_doc.at("entries").size() == 1);

    RunResult bad = run("train " + csv.string() + " --kind WARP --out " + model.string());
    CHECK(bad.exit_code != 0);
}
