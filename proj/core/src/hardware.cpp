#include "perfmodel/hardware.hpp"

#include <fstream>
#include <istream>
#include <sstream>

#include "json.hpp"

namespace perfmodel {

using json = nlohmann::ordered_json;

void HardwareSpec::validate() const {
    auto positive = [this](double v, const char* field) {
        if (!(v > 0))
            throw Error("hardware spec \"" + name + "\": " + field + " must be positive");
    };
    positive(peak_dram_bw, "peak_dram_bw_bytes_per_s");
    positive(peak_l2_bw, "peak_l2_bw_bytes_per_s");
    positive(static_cast<double>(l2_size), "l2_size_bytes");
    positive(static_cast<double>(num_sm), "num_sm");
    positive(peak_flops, "peak_flops_per_s");
    positive(corrected_dram_bw, "corrected_dram_bw_bytes_per_s");
    positive(corrected_pcie_bw, "corrected_pcie_bw_bytes_per_s");
    if (corrected_dram_bw > 1.1 * peak_dram_bw)
        throw Error("hardware spec \"" + name +
                    "\": corrected_dram_bw exceeds 1.1 x peak_dram_bw");
}

HardwareSpec parse_hardware_spec(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(std::string("hardware spec parse: ") + e.what());
    }
    HardwareSpec hw;
    hw.name = doc.value("name", std::string{"unnamed"});
    auto require = [&doc, &hw](const char* field) -> double {
        if (!doc.contains(field))
            throw Error("hardware spec \"" + hw.name + "\": missing field " + field);
        return doc.at(field).get<double>();
    };
    hw.peak_dram_bw = require("peak_dram_bw_bytes_per_s");
    hw.peak_l2_bw = require("peak_l2_bw_bytes_per_s");
    hw.l2_size = static_cast<std::int64_t>(require("l2_size_bytes"));
    hw.num_sm = static_cast<std::int64_t>(require("num_sm"));
    hw.peak_flops = require("peak_flops_per_s");
    hw.corrected_dram_bw = doc.value("corrected_dram_bw_bytes_per_s", hw.peak_dram_bw);
    hw.corrected_pcie_bw = require("corrected_pcie_bw_bytes_per_s");
    hw.validate();
    return hw;
}

HardwareSpec parse_hardware_spec(const std::string& text) {
    std::istringstream in(text);
    return parse_hardware_spec(in);
}

HardwareSpec load_hardware_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open hardware spec " + path);
    return parse_hardware_spec(in);
}

std::string serialize_hardware_spec(const HardwareSpec& hw) {
    json doc;
    doc["name"] = hw.name;
    doc["peak_dram_bw_bytes_per_s"] = hw.peak_dram_bw;
    doc["peak_l2_bw_bytes_per_s"] = hw.peak_l2_bw;
    doc["l2_size_bytes"] = hw.l2_size;
    doc["num_sm"] = hw.num_sm;
    doc["peak_flops_per_s"] = hw.peak_flops;
    doc["corrected_dram_bw_bytes_per_s"] = hw.corrected_dram_bw;
    doc["corrected_pcie_bw_bytes_per_s"] = hw.corrected_pcie_bw;
    return doc.dump(2) + "\n";
}

}  // namespace perfmodel
