#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "perfmodel/error.hpp"

namespace perfmodel {

/// Per-device peak rates parameterizing the heuristic kernel models.
/// Corrected bandwidths are the maximum *measured* rates; they default to the
/// nominal peaks when a measurement is unavailable.
struct HardwareSpec {
    std::string name;
    double peak_dram_bw = 0;       // bytes/s
    double peak_l2_bw = 0;         // bytes/s
    std::int64_t l2_size = 0;      // bytes
    std::int64_t num_sm = 0;
    double peak_flops = 0;         // FLOP/s
    double corrected_dram_bw = 0;  // bytes/s; 0 in a file means "use peak"
    double corrected_pcie_bw = 0;  // bytes/s, host<->device copies

    void validate() const;
    bool operator==(const HardwareSpec&) const = default;
};

HardwareSpec parse_hardware_spec(std::istream& in);
HardwareSpec parse_hardware_spec(const std::string& text);
HardwareSpec load_hardware_file(const std::string& path);
std::string serialize_hardware_spec(const HardwareSpec& hw);

}  // namespace perfmodel
