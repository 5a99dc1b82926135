#pragma once

#include <cstdint>

#include "perfmodel/hardware.hpp"

namespace perfmodel {

/// Batched embedding-lookup kernel parameters.
///
/// B batch size, E rows per table, T table count, L lookups per output
/// vector, D embedding dim. rows_per_block is the kernel's CTA rows argument
/// (needed only by the L2-hit-rate model).
struct EmbeddingParams {
    std::int64_t B = 1;
    std::int64_t E = 1;
    std::int64_t T = 1;
    std::int64_t L = 1;
    std::int64_t D = 1;
    std::int64_t rows_per_block = 1;
    std::int64_t element_bytes = 4;

    void validate() const;
    bool operator==(const EmbeddingParams&) const = default;
};

enum class ElDirection { Forward, Backward };

/// Per-warp DRAM traffic in bytes. One warp produces one output vector;
/// B x T warps run in total. Index reads are 4-byte; weight/output traffic
/// scales with element_bytes.
std::int64_t el_warp_bytes(const EmbeddingParams& p, ElDirection dir);

/// Plain model: all lookup traffic served from DRAM.
double el_forward_plain(const EmbeddingParams& p, const HardwareSpec& hw);
double el_backward_plain(const EmbeddingParams& p, const HardwareSpec& hw);

/// Tables whose rows can be L2-resident simultaneously, assuming one CTA per
/// SM. Clamped to at least 1.
std::int64_t el_num_tables_in_l2(const EmbeddingParams& p, const HardwareSpec& hw);

/// Rows per table resident in L2, capped at E.
std::int64_t el_cached_rows_per_table(const EmbeddingParams& p, const HardwareSpec& hw);

/// Probability that all L accessed rows are cached: C(cached, L) / C(E, L),
/// evaluated in log-gamma space. Exactly 0 when cached < L, 1 when cached = E.
double l2_hit_rate(const EmbeddingParams& p, const HardwareSpec& hw);

/// Enhanced model: weight traffic split between L2 and DRAM by the hit rate;
/// table_offsets/offsets always hit L2, indices and outputs always DRAM.
double el_enhanced(const EmbeddingParams& p, const HardwareSpec& hw, ElDirection dir);

enum class BwSelect { Dram, Pcie };

/// max(compute time, memory time) in microseconds.
double roofline(double flop, double bytes_read, double bytes_written, const HardwareSpec& hw,
                BwSelect bw = BwSelect::Dram);

}  // namespace perfmodel
