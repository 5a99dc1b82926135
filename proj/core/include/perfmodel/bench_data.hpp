#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "perfmodel/graph.hpp"

namespace perfmodel {

/// One microbenchmark measurement of a device kernel.
struct BenchRecord {
    KernelKind kind = KernelKind::Gemm;
    std::string device;
    double measured_us = 0;
    std::map<std::string, double> params;

    bool operator==(const BenchRecord&) const = default;
};

/// Required feature names per kernel kind; the single source of truth shared
/// by the dataset loader, the regressors, and the model registry.
const std::vector<std::string>& feature_names_for(KernelKind kind);

/// CSV with header `kind,device,measured_us,<feature columns>`; empty cells
/// mean "feature absent". Each row must cover its kind's required features.
std::vector<BenchRecord> load_dataset(std::istream& in);
std::vector<BenchRecord> load_dataset(const std::string& text);
std::vector<BenchRecord> load_dataset_file(const std::string& path);
std::string serialize_dataset(const std::vector<BenchRecord>& records);

/// Deterministic seeded shuffle, then a (floor(n * train_fraction), rest) split.
std::pair<std::vector<BenchRecord>, std::vector<BenchRecord>> split_dataset(
    const std::vector<BenchRecord>& records, double train_fraction, std::uint64_t seed);

/// Parameter grid the synthetic generator draws from, per feature name.
const std::map<std::string, std::vector<double>>& synth_grid(KernelKind kind);

/// Analytic ground-truth latency (roofline-style compute + memory terms) for
/// one parameter draw; the noise-free target of synth_generate.
double synth_formula(KernelKind kind, const std::map<std::string, double>& params);

/// Draws n parameter vectors log-uniformly from the per-kind grid and labels
/// them with synth_formula times a (1 + N(0, noise_pct/100)) factor.
std::vector<BenchRecord> synth_generate(KernelKind kind, std::size_t n, double noise_pct,
                                        std::uint64_t seed);

}  // namespace perfmodel
