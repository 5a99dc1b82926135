#include "perfmodel/kernel_models.hpp"

#include <algorithm>
#include <cmath>

namespace perfmodel {

namespace {

constexpr double kUsPerSecond = 1e6;

std::int64_t ceil_to_32(std::int64_t bytes) { return (bytes + 31) / 32 * 32; }

}  // namespace

void EmbeddingParams::validate() const {
    auto at_least_one = [](std::int64_t v, const char* field) {
        if (v < 1)
            throw Error(std::string("embedding params: ") + field + " must be >= 1, got " +
                        std::to_string(v));
    };
    at_least_one(B, "B");
    at_least_one(E, "E");
    at_least_one(T, "T");
    at_least_one(L, "L");
    at_least_one(D, "D");
    at_least_one(rows_per_block, "rows_per_block");
    at_least_one(element_bytes, "element_bytes");
    if (L > E)
        throw Error("embedding params: L (" + std::to_string(L) + ") exceeds E (" +
                    std::to_string(E) + ")");
}

std::int64_t el_warp_bytes(const EmbeddingParams& p, ElDirection dir) {
    const std::int64_t table_offsets = 32;
    const std::int64_t offsets = 64;
    const std::int64_t indices = ceil_to_32(4 * p.L);
    const std::int64_t outputs = ceil_to_32(p.element_bytes * p.D);
    const std::int64_t weights = dir == ElDirection::Forward
                                     ? outputs
                                     : ceil_to_32(2 * p.element_bytes * p.L * p.D);
    return table_offsets + offsets + indices + weights + outputs;
}

namespace {

double el_plain(const EmbeddingParams& p, const HardwareSpec& hw, ElDirection dir) {
    p.validate();
    hw.validate();
    const double traffic = static_cast<double>(p.B) * static_cast<double>(p.T) *
                           static_cast<double>(el_warp_bytes(p, dir));
    return kUsPerSecond * traffic / hw.corrected_dram_bw;
}

}  // namespace

double el_forward_plain(const EmbeddingParams& p, const HardwareSpec& hw) {
    return el_plain(p, hw, ElDirection::Forward);
}

double el_backward_plain(const EmbeddingParams& p, const HardwareSpec& hw) {
    return el_plain(p, hw, ElDirection::Backward);
}

std::int64_t el_num_tables_in_l2(const EmbeddingParams& p, const HardwareSpec& hw) {
    return std::max<std::int64_t>(1, p.rows_per_block * hw.num_sm / p.B);
}

std::int64_t el_cached_rows_per_table(const EmbeddingParams& p, const HardwareSpec& hw) {
    const std::int64_t row_bytes = p.D * p.element_bytes;
    const std::int64_t cached = hw.l2_size / (el_num_tables_in_l2(p, hw) * row_bytes);
    return std::min(cached, p.E);
}

double l2_hit_rate(const EmbeddingParams& p, const HardwareSpec& hw) {
    p.validate();
    hw.validate();
    const std::int64_t cached = el_cached_rows_per_table(p, hw);
    if (cached < p.L) return 0.0;
    if (cached >= p.E) return 1.0;
    // C(cached, L) / C(E, L) = prod_i (cached - i) / (E - i), summed in log
    // space so the ratio survives E in the millions without over/underflow.
    double log_ratio = 0;
    for (std::int64_t i = 0; i < p.L; ++i)
        log_ratio += std::log(static_cast<double>(cached - i) / static_cast<double>(p.E - i));
    return std::exp(log_ratio);
}

double el_enhanced(const EmbeddingParams& p, const HardwareSpec& hw, ElDirection dir) {
    p.validate();
    hw.validate();
    const double hit = l2_hit_rate(p, hw);
    const double table_offsets = 32;
    const double offsets = 64;
    const double indices = static_cast<double>(ceil_to_32(4 * p.L));
    const double outputs = static_cast<double>(ceil_to_32(p.element_bytes * p.D));
    const double weights = dir == ElDirection::Forward
                               ? outputs
                               : static_cast<double>(ceil_to_32(2 * p.element_bytes * p.L * p.D));
    const double tr_l2 = table_offsets + offsets + hit * weights;
    const double tr_dram = indices + outputs + (1.0 - hit) * weights;
    const double warps = static_cast<double>(p.B) * static_cast<double>(p.T);
    return kUsPerSecond * warps * (tr_dram / hw.corrected_dram_bw + tr_l2 / hw.peak_l2_bw);
}

double roofline(double flop, double bytes_read, double bytes_written, const HardwareSpec& hw,
                BwSelect bw) {
    hw.validate();
    if (flop < 0 || bytes_read < 0 || bytes_written < 0)
        throw Error("roofline: negative input");
    const double bw_bytes_per_s =
        bw == BwSelect::Dram ? hw.corrected_dram_bw : hw.corrected_pcie_bw;
    const double t_compute = flop / hw.peak_flops;
    const double t_memory = (bytes_read + bytes_written) / bw_bytes_per_s;
    return kUsPerSecond * std::max(t_compute, t_memory);
}

}  // namespace perfmodel
