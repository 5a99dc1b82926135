#pragma once

#include <map>
#include <optional>
#include <string>

#include "perfmodel/graph.hpp"
#include "perfmodel/hardware.hpp"
#include "perfmodel/kernel_models.hpp"
#include "perfmodel/mlp.hpp"

namespace perfmodel {

enum class ElVariant { Plain, Enhanced };
const std::string& el_variant_name(ElVariant v);
ElVariant el_variant_from_name(const std::string& name);

/// Maps every kernel kind to exactly one model: the embedding-lookup
/// heuristics, a roofline byte-count rule, or a trained MLP regressor.
struct KernelModelRegistry {
    struct Binding {
        enum class Kind { HeuristicEl, Roofline, Mlp };
        Kind kind = Kind::Roofline;
        ElDirection el_direction = ElDirection::Forward;
        BwSelect bw = BwSelect::Dram;
        std::optional<MLPRegressor> model;  // loaded lazily for Mlp bindings
    };

    ElVariant el_variant = ElVariant::Enhanced;
    std::map<KernelKind, Binding> bindings;

    /// EL kinds -> heuristics, GEMM/transpose/tril -> MLP (regressors loaded
    /// separately), concat/elementwise -> DRAM roofline, memcpy -> PCIe roofline.
    static KernelModelRegistry make_default(ElVariant variant = ElVariant::Enhanced);

    /// Installs a trained regressor on the kind named by the model itself.
    void set_regressor(MLPRegressor model);

    /// Predicted kernel time in µs. Heuristic EL feature lookups fall back
    /// from call params to op attrs; roofline byte counts fall back to the
    /// op's tensor shapes. Throws when a kind is unbound, an MLP binding has
    /// no trained model, or a required feature is missing.
    double predict_us(const KernelCall& call, const OpNode& op, const ExecutionGraph& g,
                      const HardwareSpec& hw) const;

    void validate() const;
};

}  // namespace perfmodel
