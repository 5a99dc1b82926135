// Exact-arithmetic oracles for the heuristic kernel formulas. Everything here
// is computed with big rationals and stays independent of the library's
// double-precision implementations, which the tests compare against.
#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cstdint>

#include "perfmodel/hardware.hpp"
#include "perfmodel/kernel_models.hpp"

namespace oracle {

using Rational = boost::multiprecision::cpp_rational;

inline Rational ceil32(Rational bytes) {
    using boost::multiprecision::cpp_int;
    cpp_int n = boost::multiprecision::numerator(bytes);
    cpp_int d = boost::multiprecision::denominator(bytes);
    cpp_int q = (n + 31 * d) / (32 * d);  // ceil(n / (32 d))
    return Rational(q * 32);
}

inline Rational el_warp_bytes(const perfmodel::EmbeddingParams& p, perfmodel::ElDirection dir) {
    const Rational table_offsets = 32;
    const Rational offsets = 64;
    const Rational indices = ceil32(Rational(4) * p.L);
    const Rational outputs = ceil32(Rational(p.element_bytes) * p.D);
    const Rational weights = dir == perfmodel::ElDirection::Forward
                                 ? outputs
                                 : ceil32(Rational(2) * p.element_bytes * p.L * p.D);
    return table_offsets + offsets + indices + weights + outputs;
}

inline Rational el_plain_us(const perfmodel::EmbeddingParams& p, const perfmodel::HardwareSpec& hw,
                            perfmodel::ElDirection dir) {
    const Rational traffic = Rational(p.B) * p.T * oracle::el_warp_bytes(p, dir);
    return Rational(1000000) * traffic / Rational(hw.corrected_dram_bw);
}

inline std::int64_t num_tables_in_l2(const perfmodel::EmbeddingParams& p,
                                     const perfmodel::HardwareSpec& hw) {
    const std::int64_t tables = p.rows_per_block * hw.num_sm / p.B;
    return tables < 1 ? 1 : tables;
}

inline std::int64_t cached_rows(const perfmodel::EmbeddingParams& p,
                                const perfmodel::HardwareSpec& hw) {
    const std::int64_t rows = hw.l2_size / (num_tables_in_l2(p, hw) * p.D * p.element_bytes);
    return rows < p.E ? rows : p.E;
}

/// C(cached, L) / C(E, L) as an exact rational; 0 when cached < L.
inline Rational hit_rate(std::int64_t cached, std::int64_t e, std::int64_t l) {
    if (cached < l) return 0;
    Rational ratio = 1;
    for (std::int64_t i = 0; i < l; ++i)
        ratio *= Rational(cached - i) / Rational(e - i);
    return ratio;
}

inline Rational l2_hit_rate(const perfmodel::EmbeddingParams& p,
                            const perfmodel::HardwareSpec& hw) {
    return hit_rate(cached_rows(p, hw), p.E, p.L);
}

inline Rational el_enhanced_us(const perfmodel::EmbeddingParams& p,
                               const perfmodel::HardwareSpec& hw, perfmodel::ElDirection dir) {
    const Rational hit = oracle::l2_hit_rate(p, hw);
    const Rational indices = ceil32(Rational(4) * p.L);
    const Rational outputs = ceil32(Rational(p.element_bytes) * p.D);
    const Rational weights = dir == perfmodel::ElDirection::Forward
                                 ? outputs
                                 : ceil32(Rational(2) * p.element_bytes * p.L * p.D);
    const Rational tr_l2 = Rational(32) + 64 + hit * weights;
    const Rational tr_dram = indices + outputs + (1 - hit) * weights;
    const Rational warps = Rational(p.B) * p.T;
    return Rational(1000000) * warps *
           (tr_dram / Rational(hw.corrected_dram_bw) + tr_l2 / Rational(hw.peak_l2_bw));
}

inline Rational roofline_us(Rational flop, Rational bytes, const perfmodel::HardwareSpec& hw,
                            perfmodel::BwSelect bw) {
    const Rational bw_rate(bw == perfmodel::BwSelect::Dram ? hw.corrected_dram_bw
                                                           : hw.corrected_pcie_bw);
    const Rational t_compute = flop / Rational(hw.peak_flops);
    const Rational t_memory = bytes / bw_rate;
    return Rational(1000000) * (t_compute > t_memory ? t_compute : t_memory);
}

inline double to_double(const Rational& r) { return r.convert_to<double>(); }

/// |actual - expected| / |expected|, with exact-zero expected handled.
inline double rel_error(double actual, const Rational& expected) {
    const double e = to_double(expected);
    if (e == 0.0) return actual == 0.0 ? 0.0 : 1.0;
    return std::abs(actual - e) / std::abs(e);
}

}  // namespace oracle
