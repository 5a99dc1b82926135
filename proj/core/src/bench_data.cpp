#include "perfmodel/bench_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <random>
#include <sstream>

#include "perfmodel/kernel_models.hpp"

namespace perfmodel {

const std::vector<std::string>& feature_names_for(KernelKind kind) {
    static const std::map<KernelKind, std::vector<std::string>> features = {
        {KernelKind::ElForward, {"B", "E", "T", "L", "D", "rows_per_block"}},
        {KernelKind::ElBackward, {"B", "E", "T", "L", "D", "rows_per_block"}},
        {KernelKind::Gemm, {"batch", "M", "N", "K"}},
        {KernelKind::Transpose, {"batch", "M", "N"}},
        {KernelKind::TrilForward, {"batch", "rows"}},
        {KernelKind::TrilBackward, {"batch", "rows"}},
        {KernelKind::Concat, {"flop", "bytes_read", "bytes_written"}},
        {KernelKind::Memcpy, {"flop", "bytes_read", "bytes_written"}},
        {KernelKind::Elementwise, {"flop", "bytes_read", "bytes_written"}},
    };
    return features.at(kind);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

double parse_number(const std::string& text, const std::string& context) {
    try {
        std::size_t used = 0;
        double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw Error(context + ": \"" + text + "\" is not a number");
    }
}

std::string format_number(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace

std::vector<BenchRecord> load_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error("dataset: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "kind" || header[1] != "device" ||
        header[2] != "measured_us")
        throw Error("dataset: header mismatch, expected kind,device,measured_us,<features>");

    std::vector<BenchRecord> records;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        const std::string ctx = "dataset row " + std::to_string(row);
        if (cells.size() != header.size())
            throw Error(ctx + ": expected " + std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));
        BenchRecord rec;
        try {
            rec.kind = kernel_kind_from_name(cells[0]);
        } catch (const Error& e) {
            throw Error(ctx + ": " + e.what());
        }
        rec.device = cells[1];
        rec.measured_us = parse_number(cells[2], ctx + " measured_us");
        if (!(rec.measured_us > 0))
            throw Error(ctx + ": non-positive latency " + cells[2]);
        for (std::size_t c = 3; c < cells.size(); ++c) {
            if (cells[c].empty()) continue;
            rec.params[header[c]] = parse_number(cells[c], ctx + " column " + header[c]);
        }
        for (const std::string& feature : feature_names_for(rec.kind))
            if (!rec.params.count(feature))
                throw Error(ctx + ": missing feature " + feature + " for kind " + cells[0]);
        records.push_back(std::move(rec));
    }
    return records;
}

std::vector<BenchRecord> load_dataset(const std::string& text) {
    std::istringstream in(text);
    return load_dataset(in);
}

std::vector<BenchRecord> load_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset " + path);
    return load_dataset(in);
}

std::string serialize_dataset(const std::vector<BenchRecord>& records) {
    std::vector<std::string> features;
    for (const BenchRecord& rec : records)
        for (const auto& [name, value] : rec.params)
            if (std::find(features.begin(), features.end(), name) == features.end())
                features.push_back(name);
    std::sort(features.begin(), features.end());

    std::ostringstream out;
    out << "kind,device,measured_us";
    for (const std::string& f : features) out << "," << f;
    out << "\n";
    for (const BenchRecord& rec : records) {
        out << kernel_kind_name(rec.kind) << "," << rec.device << ","
            << format_number(rec.measured_us);
        for (const std::string& f : features) {
            out << ",";
            auto it = rec.params.find(f);
            if (it != rec.params.end()) out << format_number(it->second);
        }
        out << "\n";
    }
    return out.str();
}

std::pair<std::vector<BenchRecord>, std::vector<BenchRecord>> split_dataset(
    const std::vector<BenchRecord>& records, double train_fraction, std::uint64_t seed) {
    if (train_fraction < 0 || train_fraction > 1)
        throw Error("split: train_fraction must be in [0, 1]");
    std::vector<std::size_t> index(records.size());
    for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(index.begin(), index.end(), rng);
    const std::size_t n_train =
        static_cast<std::size_t>(static_cast<double>(records.size()) * train_fraction);
    std::pair<std::vector<BenchRecord>, std::vector<BenchRecord>> out;
    for (std::size_t i = 0; i < index.size(); ++i)
        (i < n_train ? out.first : out.second).push_back(records[index[i]]);
    return out;
}

namespace {

std::vector<double> pow2_grid(double lo, double hi) {
    std::vector<double> grid;
    for (double v = lo; v <= hi; v *= 2) grid.push_back(v);
    return grid;
}

// Effective rates of the synthetic device behind the generator formulas.
constexpr double kSynthFlops = 10e12;     // FLOP/s
constexpr double kSynthBw = 600e9;        // bytes/s
constexpr double kSynthElementBytes = 4;

}  // namespace

const std::map<std::string, std::vector<double>>& synth_grid(KernelKind kind) {
    static const std::map<KernelKind, std::map<std::string, std::vector<double>>> grids = [] {
        std::map<KernelKind, std::map<std::string, std::vector<double>>> g;
        const auto dims = pow2_grid(32, 4096);
        const auto small_batch = pow2_grid(1, 128);
        g[KernelKind::Gemm] = {{"batch", small_batch}, {"M", dims}, {"N", dims}, {"K", dims}};
        g[KernelKind::Transpose] = {{"batch", small_batch}, {"M", dims}, {"N", dims}};
        g[KernelKind::TrilForward] = {{"batch", pow2_grid(32, 2048)}, {"rows", pow2_grid(8, 512)}};
        g[KernelKind::TrilBackward] = g[KernelKind::TrilForward];
        const std::map<std::string, std::vector<double>> el = {
            {"B", pow2_grid(64, 4096)},
            {"E", {1e3, 1e4, 1e5, 1e6}},
            {"T", pow2_grid(1, 16)},
            {"L", pow2_grid(1, 64)},
            {"D", pow2_grid(16, 128)},
            {"rows_per_block", {16, 32}},
        };
        g[KernelKind::ElForward] = el;
        g[KernelKind::ElBackward] = el;
        const std::map<std::string, std::vector<double>> mem = {
            {"flop", {0}},
            {"bytes_read", pow2_grid(1024, 64 * 1024 * 1024)},
            {"bytes_written", pow2_grid(1024, 64 * 1024 * 1024)},
        };
        g[KernelKind::Concat] = mem;
        g[KernelKind::Memcpy] = mem;
        g[KernelKind::Elementwise] = mem;
        return g;
    }();
    return grids.at(kind);
}

double synth_formula(KernelKind kind, const std::map<std::string, double>& params) {
    auto get = [&params](const char* name) {
        auto it = params.find(name);
        if (it == params.end())
            throw Error(std::string("synth_formula: missing param ") + name);
        return it->second;
    };
    const double us = 1e6;
    switch (kind) {
        case KernelKind::Gemm: {
            const double b = get("batch"), m = get("M"), n = get("N"), k = get("K");
            const double flop = 2.0 * b * m * n * k;
            const double bytes = kSynthElementBytes * b * (m * k + k * n + m * n);
            return us * (flop / kSynthFlops + bytes / kSynthBw);
        }
        case KernelKind::Transpose: {
            const double bytes = 2.0 * kSynthElementBytes * get("batch") * get("M") * get("N");
            return us * bytes / kSynthBw;
        }
        case KernelKind::TrilForward:
        case KernelKind::TrilBackward: {
            const double b = get("batch"), r = get("rows");
            const double bytes = kSynthElementBytes * b * (r * r + r * (r + 1) / 2.0);
            return us * bytes / kSynthBw;
        }
        case KernelKind::ElForward:
        case KernelKind::ElBackward: {
            EmbeddingParams p;
            p.B = static_cast<std::int64_t>(get("B"));
            p.E = static_cast<std::int64_t>(get("E"));
            p.T = static_cast<std::int64_t>(get("T"));
            p.L = static_cast<std::int64_t>(get("L"));
            p.D = static_cast<std::int64_t>(get("D"));
            p.rows_per_block = static_cast<std::int64_t>(get("rows_per_block"));
            const ElDirection dir =
                kind == KernelKind::ElForward ? ElDirection::Forward : ElDirection::Backward;
            const double traffic = static_cast<double>(p.B) * static_cast<double>(p.T) *
                                   static_cast<double>(el_warp_bytes(p, dir));
            return us * traffic / kSynthBw;
        }
        case KernelKind::Concat:
        case KernelKind::Memcpy:
        case KernelKind::Elementwise: {
            const double flop = get("flop");
            const double bytes = get("bytes_read") + get("bytes_written");
            return us * (flop / kSynthFlops + bytes / kSynthBw);
        }
    }
    throw Error("synth_formula: unknown kind");
}

std::vector<BenchRecord> synth_generate(KernelKind kind, std::size_t n, double noise_pct,
                                        std::uint64_t seed) {
    const auto& grid = synth_grid(kind);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<BenchRecord> records;
    records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        BenchRecord rec;
        rec.kind = kind;
        rec.device = "synthetic";
        for (const auto& [name, values] : grid) {
            std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
            rec.params[name] = values[pick(rng)];
        }
        const double noise = noise_pct > 0 ? gauss(rng) * noise_pct / 100.0 : 0.0;
        rec.measured_us = synth_formula(kind, rec.params) * std::max(0.01, 1.0 + noise);
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace perfmodel
