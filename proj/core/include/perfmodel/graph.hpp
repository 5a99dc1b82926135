#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "perfmodel/error.hpp"

namespace perfmodel {

/// Shape and element size of one tensor in the execution graph.
struct TensorSpec {
    std::vector<std::int64_t> dims;
    std::int64_t element_bytes = 4;

    std::int64_t total_elements() const;
    std::int64_t total_bytes() const;

    /// Throws if dims is empty, any dim < 1, element_bytes < 1, or the
    /// byte count overflows 64 bits. `context` names the tensor in messages.
    void validate(const std::string& context) const;

    bool operator==(const TensorSpec&) const = default;
};

/// Device kernel categories covered by the kernel model registry.
enum class KernelKind {
    ElForward,
    ElBackward,
    Gemm,
    Transpose,
    TrilForward,
    TrilBackward,
    Concat,
    Memcpy,
    Elementwise,
};

constexpr int kKernelKindCount = 9;

/// Wire name ("EL_FORWARD", "GEMM", ...) used in graph files and datasets.
const std::string& kernel_kind_name(KernelKind kind);
KernelKind kernel_kind_from_name(const std::string& name);
const std::vector<KernelKind>& all_kernel_kinds();

/// One device kernel launched by an op, with its kind-specific feature map.
struct KernelCall {
    KernelKind kind = KernelKind::Elementwise;
    std::map<std::string, double> params;

    bool operator==(const KernelCall&) const = default;
};

/// One operator in the execution graph.
///
/// `attrs` carries named scalars such as embedding parameters (B, E, T, L, D)
/// and axis bindings. An attr "bind_<P>" = k declares that kernel param P
/// tracks axis k of the op's tensors; a Resize edit on axis k re-derives P.
struct OpNode {
    std::int64_t id = 0;
    std::string name;
    std::vector<KernelCall> kernel_calls;
    std::vector<std::int64_t> inputs;   // tensor ids
    std::vector<std::int64_t> outputs;  // tensor ids
    int stream = 0;
    std::map<std::string, double> attrs;

    bool operator==(const OpNode&) const = default;
};

/// Data-dependency edge: `src` produces `tensor`, `dst` consumes it.
struct Edge {
    std::int64_t src = 0;
    std::int64_t dst = 0;
    std::int64_t tensor = 0;

    bool operator==(const Edge&) const = default;
    auto operator<=>(const Edge&) const = default;
};

/// Serialized record of executed operators, tensor shapes, and dependencies.
/// Immutable by convention: transformations return new graphs.
struct ExecutionGraph {
    std::map<std::int64_t, TensorSpec> tensors;
    std::map<std::int64_t, OpNode> ops;
    std::vector<Edge> edges;
    std::vector<std::int64_t> recorded_order;

    const OpNode& op(std::int64_t id) const;
    const TensorSpec& tensor(std::int64_t id) const;

    /// Full invariant check: tensor specs, no dangling references, DAG,
    /// recorded_order a topological permutation of the ops. Throws Error.
    void validate() const;

    /// True if a directed path src -> ... -> dst exists. When `path` is
    /// non-null and a path exists, it receives the op ids along it.
    bool has_path(std::int64_t src, std::int64_t dst,
                  std::vector<std::int64_t>* path = nullptr) const;

    bool operator==(const ExecutionGraph&) const = default;
};

ExecutionGraph parse_graph(std::istream& in);
ExecutionGraph parse_graph(const std::string& text);
ExecutionGraph load_graph_file(const std::string& path);
std::string serialize_graph(const ExecutionGraph& g);

/// recorded_order when it is consistent with the edges, otherwise a stable
/// topological sort breaking ties by ascending op id.
std::vector<std::int64_t> topological_order(const ExecutionGraph& g);

// --- What-if transformations ------------------------------------------------

struct InsertOp {
    OpNode node;
    std::map<std::int64_t, TensorSpec> new_tensors;
    std::vector<Edge> new_edges;
};

/// Removes the op and re-stitches every producer to every consumer, keeping
/// the producer-side tensor as the edge label.
struct RemoveOp {
    std::int64_t op_id = 0;
};

struct ReplaceOp {
    std::int64_t op_id = 0;
    OpNode node;
    std::map<std::int64_t, TensorSpec> new_tensors;
};

/// Sets dim[axis] = new_dim on the op's tensors and propagates through shared
/// tensors transitively: any op touching a changed tensor updates all of its
/// own tensors at the same axis index. Metadata only; no shape inference
/// through op semantics.
struct ResizeOp {
    std::int64_t op_id = 0;
    int axis = 0;
    std::int64_t new_dim = 1;
};

/// Assigns pairwise data-independent ops to distinct streams. When `streams`
/// is empty, ops (sorted by id) get streams 0, 1, 2, ...
struct ParallelizeOps {
    std::vector<std::int64_t> op_ids;
    std::vector<int> streams;
};

struct FuseEmbeddingOps {
    std::vector<std::int64_t> op_ids;
};

using GraphEdit =
    std::variant<InsertOp, RemoveOp, ReplaceOp, ResizeOp, ParallelizeOps, FuseEmbeddingOps>;

/// Applies one edit and returns a new, fully re-validated graph.
ExecutionGraph transform(const ExecutionGraph& g, const GraphEdit& edit);

/// Replaces a set of embedding-lookup ops (kind EL_FORWARD, matching B, L, D)
/// by one batched op with T = sum of member T and E = floor(mean of member E).
/// The fused op gets a fresh id (max op id + 1).
ExecutionGraph fuse_embedding_ops(const ExecutionGraph& g,
                                  const std::vector<std::int64_t>& op_ids);

std::vector<GraphEdit> parse_edit_script(std::istream& in);
std::vector<GraphEdit> parse_edit_script(const std::string& text);

}  // namespace perfmodel
