#include "perfmodel/registry.hpp"

namespace perfmodel {

const std::string& el_variant_name(ElVariant v) {
    static const std::string names[2] = {"plain", "enhanced"};
    return names[static_cast<int>(v)];
}

ElVariant el_variant_from_name(const std::string& name) {
    if (name == "plain") return ElVariant::Plain;
    if (name == "enhanced") return ElVariant::Enhanced;
    throw Error("unknown EL model variant \"" + name + "\" (expected plain or enhanced)");
}

KernelModelRegistry KernelModelRegistry::make_default(ElVariant variant) {
    KernelModelRegistry reg;
    reg.el_variant = variant;
    using B = Binding;
    reg.bindings[KernelKind::ElForward] =
        B{B::Kind::HeuristicEl, ElDirection::Forward, BwSelect::Dram, std::nullopt};
    reg.bindings[KernelKind::ElBackward] =
        B{B::Kind::HeuristicEl, ElDirection::Backward, BwSelect::Dram, std::nullopt};
    reg.bindings[KernelKind::Gemm] =
        B{B::Kind::Mlp, ElDirection::Forward, BwSelect::Dram, std::nullopt};
    reg.bindings[KernelKind::Transpose] =
        B{B::Kind::Mlp, ElDirection::Forward, BwSelect::Dram, std::nullopt};
    reg.bindings[KernelKind::TrilForward] =
        B{B::Kind::Mlp, ElDirection::Forward, BwSelect::Dram, std::nullopt};
    reg.bindings[KernelKind::TrilBackward] =
        B{B::Kind::Mlp, ElDirection::Forward, BwSelect::Dram, std::nullopt};
    reg.bindings[KernelKind::Concat] =
        B{B::Kind::Roofline, ElDirection::Forward, BwSelect::Dram, std::nullopt};
    reg.bindings[KernelKind::Memcpy] =
        B{B::Kind::Roofline, ElDirection::Forward, BwSelect::Pcie, std::nullopt};
    reg.bindings[KernelKind::Elementwise] =
        B{B::Kind::Roofline, ElDirection::Forward, BwSelect::Dram, std::nullopt};
    return reg;
}

void KernelModelRegistry::set_regressor(MLPRegressor model) {
    model.validate();
    const KernelKind kind = kernel_kind_from_name(model.kernel_kind);
    auto it = bindings.find(kind);
    if (it == bindings.end() || it->second.kind != Binding::Kind::Mlp)
        throw Error("registry: kind " + model.kernel_kind + " is not MLP-bound");
    it->second.model = std::move(model);
}

void KernelModelRegistry::validate() const {
    for (KernelKind kind : all_kernel_kinds())
        if (!bindings.count(kind))
            throw Error("registry: kernel kind " + kernel_kind_name(kind) + " is unbound");
}

namespace {

double required_param(const KernelCall& call, const OpNode& op, const char* name) {
    auto it = call.params.find(name);
    if (it != call.params.end()) return it->second;
    auto at = op.attrs.find(name);
    if (at != op.attrs.end()) return at->second;
    throw Error("op " + std::to_string(op.id) + " (" + op.name + "): kernel " +
                kernel_kind_name(call.kind) + " is missing required param " + name);
}

std::optional<double> optional_param(const KernelCall& call, const OpNode& op,
                                     const char* name) {
    auto it = call.params.find(name);
    if (it != call.params.end()) return it->second;
    auto at = op.attrs.find(name);
    if (at != op.attrs.end()) return at->second;
    return std::nullopt;
}

EmbeddingParams embedding_params(const KernelCall& call, const OpNode& op, bool need_rows) {
    EmbeddingParams p;
    p.B = static_cast<std::int64_t>(required_param(call, op, "B"));
    p.E = static_cast<std::int64_t>(required_param(call, op, "E"));
    p.T = static_cast<std::int64_t>(required_param(call, op, "T"));
    p.L = static_cast<std::int64_t>(required_param(call, op, "L"));
    p.D = static_cast<std::int64_t>(required_param(call, op, "D"));
    if (need_rows) {
        p.rows_per_block = static_cast<std::int64_t>(required_param(call, op, "rows_per_block"));
    } else if (auto rows = optional_param(call, op, "rows_per_block")) {
        p.rows_per_block = static_cast<std::int64_t>(*rows);
    }
    if (auto eb = optional_param(call, op, "element_bytes"))
        p.element_bytes = static_cast<std::int64_t>(*eb);
    return p;
}

double tensor_bytes_sum(const ExecutionGraph& g, const std::vector<std::int64_t>& ids) {
    double total = 0;
    for (std::int64_t id : ids) total += static_cast<double>(g.tensor(id).total_bytes());
    return total;
}

double tensor_elements_sum(const ExecutionGraph& g, const std::vector<std::int64_t>& ids) {
    double total = 0;
    for (std::int64_t id : ids) total += static_cast<double>(g.tensor(id).total_elements());
    return total;
}

}  // namespace

double KernelModelRegistry::predict_us(const KernelCall& call, const OpNode& op,
                                       const ExecutionGraph& g, const HardwareSpec& hw) const {
    auto it = bindings.find(call.kind);
    if (it == bindings.end())
        throw Error("registry: kernel kind " + kernel_kind_name(call.kind) + " is unbound");
    const Binding& binding = it->second;
    switch (binding.kind) {
        case Binding::Kind::HeuristicEl: {
            const bool enhanced = el_variant == ElVariant::Enhanced;
            const EmbeddingParams p = embedding_params(call, op, enhanced);
            if (enhanced) return el_enhanced(p, hw, binding.el_direction);
            return binding.el_direction == ElDirection::Forward ? el_forward_plain(p, hw)
                                                                : el_backward_plain(p, hw);
        }
        case Binding::Kind::Roofline: {
            // Byte counts fall back to tensor shapes: memcpy moves its payload
            // once on each side; concat/elementwise read inputs, write outputs.
            double bytes_read, bytes_written, flop = 0;
            if (call.kind == KernelKind::Memcpy) {
                const auto& payload_ids = op.outputs.empty() ? op.inputs : op.outputs;
                const double payload = tensor_bytes_sum(g, payload_ids);
                bytes_read = payload;
                bytes_written = payload;
            } else {
                bytes_read = tensor_bytes_sum(g, op.inputs);
                bytes_written = tensor_bytes_sum(g, op.outputs);
                if (call.kind == KernelKind::Elementwise)
                    flop = tensor_elements_sum(g, op.outputs);
            }
            if (auto v = optional_param(call, op, "bytes_read")) bytes_read = *v;
            if (auto v = optional_param(call, op, "bytes_written")) bytes_written = *v;
            if (auto v = optional_param(call, op, "flop")) flop = *v;
            return roofline(flop, bytes_read, bytes_written, hw, binding.bw);
        }
        case Binding::Kind::Mlp: {
            if (!binding.model)
                throw Error("no trained regressor loaded for kernel kind " +
                            kernel_kind_name(call.kind));
            std::map<std::string, double> features;
            for (const std::string& name : feature_names_for(call.kind))
                features[name] = required_param(call, op, name.c_str());
            return binding.model->predict(features);
        }
    }
    throw Error("registry: unreachable binding kind");
}

}  // namespace perfmodel
