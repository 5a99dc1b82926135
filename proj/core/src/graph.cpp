#include "perfmodel/graph.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "json.hpp"

namespace perfmodel {

using json = nlohmann::ordered_json;

namespace {

std::string join_ids(const std::vector<std::int64_t>& ids, const char* sep = ", ") {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += sep;
        out += std::to_string(ids[i]);
    }
    return out;
}

}  // namespace

std::int64_t TensorSpec::total_elements() const {
    std::int64_t n = 1;
    for (std::int64_t d : dims) {
        if (__builtin_mul_overflow(n, d, &n))
            throw Error("tensor element count overflows 64 bits");
    }
    return n;
}

std::int64_t TensorSpec::total_bytes() const {
    std::int64_t bytes = total_elements();
    if (__builtin_mul_overflow(bytes, element_bytes, &bytes))
        throw Error("tensor byte count overflows 64 bits");
    return bytes;
}

void TensorSpec::validate(const std::string& context) const {
    if (dims.empty()) throw Error(context + ": dims must be non-empty");
    for (std::int64_t d : dims)
        if (d < 1) throw Error(context + ": dim " + std::to_string(d) + " < 1");
    if (element_bytes < 1)
        throw Error(context + ": element_bytes " + std::to_string(element_bytes) + " < 1");
    std::int64_t bytes = 1;
    for (std::int64_t d : dims)
        if (__builtin_mul_overflow(bytes, d, &bytes))
            throw Error(context + ": byte count overflows 64 bits");
    if (__builtin_mul_overflow(bytes, element_bytes, &bytes))
        throw Error(context + ": byte count overflows 64 bits");
}

namespace {

const std::vector<std::pair<KernelKind, std::string>> kKindNames = {
    {KernelKind::ElForward, "EL_FORWARD"},
    {KernelKind::ElBackward, "EL_BACKWARD"},
    {KernelKind::Gemm, "GEMM"},
    {KernelKind::Transpose, "TRANSPOSE"},
    {KernelKind::TrilForward, "TRIL_FORWARD"},
    {KernelKind::TrilBackward, "TRIL_BACKWARD"},
    {KernelKind::Concat, "CONCAT"},
    {KernelKind::Memcpy, "MEMCPY"},
    {KernelKind::Elementwise, "ELEMENTWISE"},
};

}  // namespace

const std::string& kernel_kind_name(KernelKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    throw Error("unknown kernel kind value");
}

KernelKind kernel_kind_from_name(const std::string& name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw Error("unknown kernel kind \"" + name + "\"");
}

const std::vector<KernelKind>& all_kernel_kinds() {
    static const std::vector<KernelKind> kinds = [] {
        std::vector<KernelKind> v;
        for (const auto& [k, n] : kKindNames) v.push_back(k);
        return v;
    }();
    return kinds;
}

const OpNode& ExecutionGraph::op(std::int64_t id) const {
    auto it = ops.find(id);
    if (it == ops.end()) throw Error("unknown op id " + std::to_string(id));
    return it->second;
}

const TensorSpec& ExecutionGraph::tensor(std::int64_t id) const {
    auto it = tensors.find(id);
    if (it == tensors.end()) throw Error("unknown tensor id " + std::to_string(id));
    return it->second;
}

namespace {

std::map<std::int64_t, std::vector<std::int64_t>> successors(const ExecutionGraph& g) {
    std::map<std::int64_t, std::vector<std::int64_t>> succ;
    for (const auto& [id, op] : g.ops) succ[id];
    for (const Edge& e : g.edges) succ[e.src].push_back(e.dst);
    return succ;
}

/// Kahn's algorithm with an explicit tie-break priority. Returns op ids in
/// topological order; throws naming the leftover ops when a cycle exists.
std::vector<std::int64_t> kahn_order(
    const ExecutionGraph& g,
    const std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>>& priority) {
    auto succ = successors(g);
    std::map<std::int64_t, int> indeg;
    for (const auto& [id, op] : g.ops) indeg[id] = 0;
    for (const Edge& e : g.edges) ++indeg[e.dst];

    using Entry = std::pair<std::pair<std::int64_t, std::int64_t>, std::int64_t>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> ready;
    for (const auto& [id, d] : indeg)
        if (d == 0) ready.push({priority.at(id), id});

    std::vector<std::int64_t> order;
    order.reserve(g.ops.size());
    while (!ready.empty()) {
        auto [prio, id] = ready.top();
        ready.pop();
        order.push_back(id);
        for (std::int64_t next : succ[id])
            if (--indeg[next] == 0) ready.push({priority.at(next), next});
    }
    if (order.size() != g.ops.size()) {
        std::vector<std::int64_t> leftover;
        std::set<std::int64_t> done(order.begin(), order.end());
        for (const auto& [id, op] : g.ops)
            if (!done.count(id)) leftover.push_back(id);
        throw Error("cycle detected among ops: " + join_ids(leftover));
    }
    return order;
}

std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> id_priority(
    const ExecutionGraph& g) {
    std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> prio;
    for (const auto& [id, op] : g.ops) prio[id] = {0, id};
    return prio;
}

/// Priority that preserves the relative recorded order of surviving ops;
/// ops absent from the old order (insertions) sort after, by id.
std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> recorded_priority(
    const ExecutionGraph& g, const std::vector<std::int64_t>& old_order) {
    std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> prio;
    for (const auto& [id, op] : g.ops)
        prio[id] = {std::numeric_limits<std::int64_t>::max(), id};
    for (std::size_t pos = 0; pos < old_order.size(); ++pos) {
        auto it = prio.find(old_order[pos]);
        if (it != prio.end()) it->second = {static_cast<std::int64_t>(pos), old_order[pos]};
    }
    return prio;
}

bool order_consistent(const ExecutionGraph& g, std::string* why = nullptr) {
    if (g.recorded_order.size() != g.ops.size()) {
        if (why) *why = "recorded_order has " + std::to_string(g.recorded_order.size()) +
                        " entries for " + std::to_string(g.ops.size()) + " ops";
        return false;
    }
    std::map<std::int64_t, std::size_t> pos;
    for (std::size_t i = 0; i < g.recorded_order.size(); ++i) {
        std::int64_t id = g.recorded_order[i];
        if (!g.ops.count(id)) {
            if (why) *why = "recorded_order names unknown op " + std::to_string(id);
            return false;
        }
        if (!pos.emplace(id, i).second) {
            if (why) *why = "recorded_order repeats op " + std::to_string(id);
            return false;
        }
    }
    for (const Edge& e : g.edges) {
        if (pos.at(e.src) > pos.at(e.dst)) {
            if (why)
                *why = "recorded_order violates edge (" + std::to_string(e.src) + " -> " +
                       std::to_string(e.dst) + "): op " + std::to_string(e.dst) +
                       " appears before op " + std::to_string(e.src);
            return false;
        }
    }
    return true;
}

}  // namespace

void ExecutionGraph::validate() const {
    for (const auto& [id, t] : tensors) t.validate("tensor " + std::to_string(id));
    for (const auto& [id, op] : ops) {
        if (op.id != id)
            throw Error("op map key " + std::to_string(id) + " does not match node id " +
                        std::to_string(op.id));
        if (op.stream < 0)
            throw Error("op " + std::to_string(id) + ": negative stream");
        for (std::int64_t t : op.inputs)
            if (!tensors.count(t))
                throw Error("op " + std::to_string(id) + " references unknown input tensor " +
                            std::to_string(t));
        for (std::int64_t t : op.outputs)
            if (!tensors.count(t))
                throw Error("op " + std::to_string(id) + " references unknown output tensor " +
                            std::to_string(t));
    }
    for (const Edge& e : edges) {
        if (!ops.count(e.src)) throw Error("edge references unknown op " + std::to_string(e.src));
        if (!ops.count(e.dst)) throw Error("edge references unknown op " + std::to_string(e.dst));
        if (!tensors.count(e.tensor))
            throw Error("edge (" + std::to_string(e.src) + " -> " + std::to_string(e.dst) +
                        ") references unknown tensor " + std::to_string(e.tensor));
    }
    kahn_order(*this, id_priority(*this));  // throws on cycle
    std::string why;
    if (!order_consistent(*this, &why)) throw Error(why);
}

bool ExecutionGraph::has_path(std::int64_t src, std::int64_t dst,
                              std::vector<std::int64_t>* path) const {
    auto succ = successors(*this);
    std::map<std::int64_t, std::int64_t> parent;
    std::queue<std::int64_t> frontier;
    frontier.push(src);
    parent[src] = src;
    while (!frontier.empty()) {
        std::int64_t cur = frontier.front();
        frontier.pop();
        for (std::int64_t next : succ[cur]) {
            if (parent.count(next)) continue;
            parent[next] = cur;
            if (next == dst) {
                if (path) {
                    path->clear();
                    for (std::int64_t n = dst; n != src; n = parent[n]) path->push_back(n);
                    path->push_back(src);
                    std::reverse(path->begin(), path->end());
                }
                return true;
            }
            frontier.push(next);
        }
    }
    return false;
}

std::vector<std::int64_t> topological_order(const ExecutionGraph& g) {
    if (order_consistent(g)) return g.recorded_order;
    return kahn_order(g, id_priority(g));
}

// --- Parsing / serialization -------------------------------------------------

namespace {

constexpr int kGraphFormatVersion = 1;

TensorSpec tensor_from_json(const json& j, const std::string& context) {
    TensorSpec t;
    if (!j.contains("dims")) throw Error(context + ": missing \"dims\"");
    t.dims = j.at("dims").get<std::vector<std::int64_t>>();
    t.element_bytes = j.value("element_bytes", std::int64_t{4});
    return t;
}

std::map<std::string, double> scalar_map_from_json(const json& j, const std::string& context) {
    std::map<std::string, double> out;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_number())
            throw Error(context + ": value of \"" + key + "\" is not a number");
        out[key] = value.get<double>();
    }
    return out;
}

OpNode op_from_json(const json& j) {
    OpNode op;
    if (!j.contains("id")) throw Error("op record missing \"id\"");
    op.id = j.at("id").get<std::int64_t>();
    const std::string ctx = "op " + std::to_string(op.id);
    if (!j.contains("name")) throw Error(ctx + ": missing \"name\"");
    op.name = j.at("name").get<std::string>();
    op.stream = j.value("stream", 0);
    if (j.contains("inputs")) op.inputs = j.at("inputs").get<std::vector<std::int64_t>>();
    if (j.contains("outputs")) op.outputs = j.at("outputs").get<std::vector<std::int64_t>>();
    if (j.contains("attrs")) op.attrs = scalar_map_from_json(j.at("attrs"), ctx + " attrs");
    if (j.contains("kernel_calls")) {
        for (const auto& kj : j.at("kernel_calls")) {
            KernelCall call;
            if (!kj.contains("kind")) throw Error(ctx + ": kernel call missing \"kind\"");
            call.kind = kernel_kind_from_name(kj.at("kind").get<std::string>());
            if (kj.contains("params"))
                call.params = scalar_map_from_json(kj.at("params"), ctx + " kernel params");
            op.kernel_calls.push_back(std::move(call));
        }
    }
    return op;
}

json op_to_json(const OpNode& op) {
    json j;
    j["id"] = op.id;
    j["name"] = op.name;
    j["stream"] = op.stream;
    j["inputs"] = op.inputs;
    j["outputs"] = op.outputs;
    j["attrs"] = json::object();
    for (const auto& [k, v] : op.attrs) j["attrs"][k] = v;
    j["kernel_calls"] = json::array();
    for (const KernelCall& call : op.kernel_calls) {
        json kj;
        kj["kind"] = kernel_kind_name(call.kind);
        kj["params"] = json::object();
        for (const auto& [k, v] : call.params) kj["params"][k] = v;
        j["kernel_calls"].push_back(std::move(kj));
    }
    return j;
}

ExecutionGraph graph_from_json(const json& doc) {
    if (!doc.is_object()) throw Error("graph document is not an object");
    if (doc.value("format_version", -1) != kGraphFormatVersion)
        throw Error("graph file: missing or unsupported format_version (expected 1)");
    ExecutionGraph g;
    if (doc.contains("tensors")) {
        for (const auto& [key, value] : doc.at("tensors").items()) {
            std::int64_t id;
            try {
                id = std::stoll(key);
            } catch (const std::exception&) {
                throw Error("tensor key \"" + key + "\" is not an integer id");
            }
            g.tensors[id] = tensor_from_json(value, "tensor " + key);
        }
    }
    if (doc.contains("ops")) {
        for (const auto& oj : doc.at("ops")) {
            OpNode op = op_from_json(oj);
            if (g.ops.count(op.id))
                throw Error("duplicate op id " + std::to_string(op.id));
            g.ops[op.id] = std::move(op);
        }
    }
    if (doc.contains("edges")) {
        for (const auto& ej : doc.at("edges")) {
            if (!ej.is_array() || ej.size() != 3)
                throw Error("edge record must be [src, dst, tensor]");
            g.edges.push_back(Edge{ej[0].get<std::int64_t>(), ej[1].get<std::int64_t>(),
                                   ej[2].get<std::int64_t>()});
        }
    }
    if (doc.contains("order"))
        g.recorded_order = doc.at("order").get<std::vector<std::int64_t>>();
    g.validate();
    return g;
}

}  // namespace

ExecutionGraph parse_graph(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(std::string("graph parse: ") + e.what());
    }
    return graph_from_json(doc);
}

ExecutionGraph parse_graph(const std::string& text) {
    std::istringstream in(text);
    return parse_graph(in);
}

ExecutionGraph load_graph_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open graph file " + path);
    return parse_graph(in);
}

std::string serialize_graph(const ExecutionGraph& g) {
    json doc;
    doc["format_version"] = kGraphFormatVersion;
    doc["tensors"] = json::object();
    for (const auto& [id, t] : g.tensors) {
        json tj;
        tj["dims"] = t.dims;
        tj["element_bytes"] = t.element_bytes;
        doc["tensors"][std::to_string(id)] = std::move(tj);
    }
    doc["ops"] = json::array();
    for (const auto& [id, op] : g.ops) doc["ops"].push_back(op_to_json(op));
    doc["edges"] = json::array();
    for (const Edge& e : g.edges) doc["edges"].push_back({e.src, e.dst, e.tensor});
    doc["order"] = g.recorded_order;
    return doc.dump(2) + "\n";
}

// --- Transformations ----------------------------------------------------------

namespace {

void rebuild_order(ExecutionGraph& g, const std::vector<std::int64_t>& old_order) {
    g.recorded_order = kahn_order(g, recorded_priority(g, old_order));
}

ExecutionGraph apply_insert(const ExecutionGraph& g, const InsertOp& edit) {
    ExecutionGraph out = g;
    if (out.ops.count(edit.node.id))
        throw Error("insert: op id " + std::to_string(edit.node.id) + " already exists");
    for (const auto& [id, t] : edit.new_tensors) {
        auto it = out.tensors.find(id);
        if (it != out.tensors.end() && !(it->second == t))
            throw Error("insert: tensor id " + std::to_string(id) +
                        " already exists with a different spec");
        out.tensors[id] = t;
    }
    out.ops[edit.node.id] = edit.node;
    for (const Edge& e : edit.new_edges) out.edges.push_back(e);
    rebuild_order(out, g.recorded_order);
    out.validate();
    return out;
}

ExecutionGraph apply_remove(const ExecutionGraph& g, const RemoveOp& edit) {
    if (!g.ops.count(edit.op_id))
        throw Error("remove: unknown op id " + std::to_string(edit.op_id));
    ExecutionGraph out = g;
    std::vector<Edge> in_edges, out_edges, kept;
    for (const Edge& e : out.edges) {
        if (e.dst == edit.op_id)
            in_edges.push_back(e);
        else if (e.src == edit.op_id)
            out_edges.push_back(e);
        else
            kept.push_back(e);
    }
    std::set<Edge> stitched;
    for (const Edge& in : in_edges)
        for (const Edge& outgoing : out_edges)
            stitched.insert(Edge{in.src, outgoing.dst, in.tensor});
    for (const Edge& e : kept) stitched.erase(e);
    out.edges = std::move(kept);
    out.edges.insert(out.edges.end(), stitched.begin(), stitched.end());
    out.ops.erase(edit.op_id);
    rebuild_order(out, g.recorded_order);
    out.validate();
    return out;
}

ExecutionGraph apply_replace(const ExecutionGraph& g, const ReplaceOp& edit) {
    if (!g.ops.count(edit.op_id))
        throw Error("replace: unknown op id " + std::to_string(edit.op_id));
    ExecutionGraph out = g;
    if (edit.node.id != edit.op_id && out.ops.count(edit.node.id))
        throw Error("replace: op id " + std::to_string(edit.node.id) + " already exists");
    for (const auto& [id, t] : edit.new_tensors) out.tensors[id] = t;
    out.ops.erase(edit.op_id);
    out.ops[edit.node.id] = edit.node;
    for (Edge& e : out.edges) {
        if (e.src == edit.op_id) e.src = edit.node.id;
        if (e.dst == edit.op_id) e.dst = edit.node.id;
    }
    std::vector<std::int64_t> old_order = g.recorded_order;
    std::replace(old_order.begin(), old_order.end(), edit.op_id, edit.node.id);
    rebuild_order(out, old_order);
    out.validate();
    return out;
}

std::vector<std::int64_t> adjacent_tensors(const OpNode& op) {
    std::vector<std::int64_t> ids = op.inputs;
    ids.insert(ids.end(), op.outputs.begin(), op.outputs.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

ExecutionGraph apply_resize(const ExecutionGraph& g, const ResizeOp& edit) {
    if (!g.ops.count(edit.op_id))
        throw Error("resize: unknown op id " + std::to_string(edit.op_id));
    if (edit.new_dim < 1)
        throw Error("resize: new dim " + std::to_string(edit.new_dim) + " < 1");
    if (edit.axis < 0) throw Error("resize: negative axis");
    ExecutionGraph out = g;
    const std::size_t axis = static_cast<std::size_t>(edit.axis);

    // Tensor-to-consumer/producer index.
    std::map<std::int64_t, std::vector<std::int64_t>> ops_by_tensor;
    for (const auto& [id, op] : out.ops)
        for (std::int64_t t : adjacent_tensors(op)) ops_by_tensor[t].push_back(id);

    auto resize_tensor = [&](std::int64_t tid) -> bool {
        TensorSpec& t = out.tensors.at(tid);
        if (t.dims.size() <= axis || t.dims[axis] == edit.new_dim) return false;
        t.dims[axis] = edit.new_dim;
        return true;
    };

    std::set<std::int64_t> affected_ops;
    std::queue<std::int64_t> worklist;  // op ids whose tensors need the new dim
    worklist.push(edit.op_id);
    bool any_axis = false;
    while (!worklist.empty()) {
        std::int64_t opid = worklist.front();
        worklist.pop();
        if (!affected_ops.insert(opid).second) continue;
        for (std::int64_t tid : adjacent_tensors(out.ops.at(opid))) {
            const TensorSpec& t = out.tensors.at(tid);
            if (t.dims.size() <= axis) continue;
            any_axis = true;
            if (resize_tensor(tid))
                for (std::int64_t other : ops_by_tensor[tid]) worklist.push(other);
        }
    }
    if (!any_axis)
        throw Error("resize: op " + std::to_string(edit.op_id) + " has no tensor with axis " +
                    std::to_string(edit.axis));

    // Re-derive kernel params declared axis-bound via attr "bind_<P>" = axis.
    for (std::int64_t opid : affected_ops) {
        OpNode& op = out.ops.at(opid);
        for (const auto& [attr, value] : op.attrs) {
            if (attr.rfind("bind_", 0) != 0) continue;
            if (static_cast<std::int64_t>(value) != edit.axis) continue;
            const std::string param = attr.substr(5);
            if (op.attrs.count(param)) op.attrs[param] = static_cast<double>(edit.new_dim);
            for (KernelCall& call : op.kernel_calls)
                if (call.params.count(param))
                    call.params[param] = static_cast<double>(edit.new_dim);
        }
    }
    out.validate();
    return out;
}

ExecutionGraph apply_parallelize(const ExecutionGraph& g, const ParallelizeOps& edit) {
    if (edit.op_ids.empty()) throw Error("parallelize: empty op set");
    for (std::int64_t id : edit.op_ids)
        if (!g.ops.count(id)) throw Error("parallelize: unknown op id " + std::to_string(id));
    if (!edit.streams.empty() && edit.streams.size() != edit.op_ids.size())
        throw Error("parallelize: streams list must match op list length");

    std::vector<std::int64_t> sorted = edit.op_ids;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        for (std::size_t j = 0; j < sorted.size(); ++j) {
            if (i == j) continue;
            std::vector<std::int64_t> path;
            if (g.has_path(sorted[i], sorted[j], &path))
                throw Error("parallelize: ops " + std::to_string(sorted[i]) + " and " +
                            std::to_string(sorted[j]) + " are data-dependent: " +
                            join_ids(path, " -> "));
        }
    }
    ExecutionGraph out = g;
    if (edit.streams.empty()) {
        for (std::size_t i = 0; i < sorted.size(); ++i)
            out.ops.at(sorted[i]).stream = static_cast<int>(i);
    } else {
        for (std::size_t i = 0; i < edit.op_ids.size(); ++i) {
            if (edit.streams[i] < 0) throw Error("parallelize: negative stream");
            out.ops.at(edit.op_ids[i]).stream = edit.streams[i];
        }
    }
    out.validate();
    return out;
}

double embedding_param(const OpNode& op, const KernelCall& call, const std::string& name) {
    auto it = call.params.find(name);
    if (it != call.params.end()) return it->second;
    auto at = op.attrs.find(name);
    if (at != op.attrs.end()) return at->second;
    throw Error("fuse: op " + std::to_string(op.id) + " (" + op.name +
                ") is missing embedding param " + name);
}

}  // namespace

ExecutionGraph fuse_embedding_ops(const ExecutionGraph& g,
                                  const std::vector<std::int64_t>& op_ids) {
    if (op_ids.empty()) throw Error("fuse: empty op set");
    std::vector<std::int64_t> members = op_ids;
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());

    // Validate members and gather embedding params.
    double common_b = 0, common_l = 0, common_d = 0;
    std::int64_t t_sum = 0;
    double e_sum = 0;
    const OpNode* first = nullptr;
    const KernelCall* first_call = nullptr;
    std::map<std::int64_t, std::size_t> order_pos;
    for (std::size_t i = 0; i < g.recorded_order.size(); ++i) order_pos[g.recorded_order[i]] = i;

    std::int64_t lead = members.front();
    std::size_t lead_pos = std::numeric_limits<std::size_t>::max();
    for (std::int64_t id : members) {
        const OpNode& op = g.op(id);
        if (op.kernel_calls.empty())
            throw Error("fuse: op " + std::to_string(id) + " (" + op.name +
                        ") has no kernel calls");
        for (const KernelCall& call : op.kernel_calls)
            if (call.kind != KernelKind::ElForward)
                throw Error("fuse: op " + std::to_string(id) + " (" + op.name +
                            ") has non-embedding kernel " + kernel_kind_name(call.kind));
        const KernelCall& call = op.kernel_calls.front();
        double b = embedding_param(op, call, "B");
        double e = embedding_param(op, call, "E");
        double t = embedding_param(op, call, "T");
        double l = embedding_param(op, call, "L");
        double d = embedding_param(op, call, "D");
        if (!first) {
            first = &op;
            first_call = &call;
            common_b = b;
            common_l = l;
            common_d = d;
        } else {
            if (b != common_b)
                throw Error("fuse: mismatched param B across members (" +
                            std::to_string(common_b) + " vs " + std::to_string(b) + " at op " +
                            std::to_string(id) + ")");
            if (l != common_l)
                throw Error("fuse: mismatched param L across members (" +
                            std::to_string(common_l) + " vs " + std::to_string(l) + " at op " +
                            std::to_string(id) + ")");
            if (d != common_d)
                throw Error("fuse: mismatched param D across members (" +
                            std::to_string(common_d) + " vs " + std::to_string(d) + " at op " +
                            std::to_string(id) + ")");
        }
        t_sum += static_cast<std::int64_t>(t);
        e_sum += e;
        auto pos = order_pos.find(id);
        if (pos != order_pos.end() && pos->second < lead_pos) {
            lead_pos = pos->second;
            lead = id;
        }
    }

    const std::int64_t e_mean =
        static_cast<std::int64_t>(e_sum / static_cast<double>(members.size()));

    OpNode fused = g.op(lead);  // inherits name, stream, attrs of the earliest member
    fused.id = g.ops.rbegin()->first + 1;
    fused.inputs.clear();
    fused.outputs.clear();
    std::set<std::int64_t> seen_in, seen_out;
    for (std::int64_t id : g.recorded_order) {
        if (std::find(members.begin(), members.end(), id) == members.end()) continue;
        const OpNode& op = g.op(id);
        for (std::int64_t t : op.inputs)
            if (seen_in.insert(t).second) fused.inputs.push_back(t);
        for (std::int64_t t : op.outputs)
            if (seen_out.insert(t).second) fused.outputs.push_back(t);
    }

    KernelCall call = *first_call;
    call.params["B"] = common_b;
    call.params["E"] = static_cast<double>(e_mean);
    call.params["T"] = static_cast<double>(t_sum);
    call.params["L"] = common_l;
    call.params["D"] = common_d;
    fused.kernel_calls = {call};
    for (const char* key : {"B", "E", "T", "L", "D"}) {
        if (fused.attrs.count(key)) fused.attrs[key] = call.params.at(key);
    }

    ExecutionGraph out = g;
    const std::int64_t fused_id = fused.id;
    std::set<std::int64_t> member_set(members.begin(), members.end());
    std::set<Edge> new_edges;
    for (const Edge& e : g.edges) {
        bool src_in = member_set.count(e.src), dst_in = member_set.count(e.dst);
        if (src_in && dst_in) continue;  // internal edge vanishes
        Edge rewired = e;
        if (src_in) rewired.src = fused_id;
        if (dst_in) rewired.dst = fused_id;
        new_edges.insert(rewired);
    }
    out.edges.assign(new_edges.begin(), new_edges.end());
    for (std::int64_t id : members) out.ops.erase(id);
    out.ops[fused_id] = std::move(fused);

    std::vector<std::int64_t> old_order = g.recorded_order;
    std::replace(old_order.begin(), old_order.end(), lead, fused_id);
    rebuild_order(out, old_order);
    out.validate();
    return out;
}

ExecutionGraph transform(const ExecutionGraph& g, const GraphEdit& edit) {
    return std::visit(
        [&g](const auto& e) -> ExecutionGraph {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, InsertOp>) return apply_insert(g, e);
            if constexpr (std::is_same_v<T, RemoveOp>) return apply_remove(g, e);
            if constexpr (std::is_same_v<T, ReplaceOp>) return apply_replace(g, e);
            if constexpr (std::is_same_v<T, ResizeOp>) return apply_resize(g, e);
            if constexpr (std::is_same_v<T, ParallelizeOps>) return apply_parallelize(g, e);
            if constexpr (std::is_same_v<T, FuseEmbeddingOps>)
                return fuse_embedding_ops(g, e.op_ids);
        },
        edit);
}

// --- Edit scripts --------------------------------------------------------------

namespace {

GraphEdit edit_from_json(const json& j) {
    if (!j.is_object() || !j.contains("kind"))
        throw Error("edit record missing \"kind\"");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "insert") {
        InsertOp e;
        e.node = op_from_json(j.at("node"));
        if (j.contains("new_tensors"))
            for (const auto& [key, value] : j.at("new_tensors").items())
                e.new_tensors[std::stoll(key)] = tensor_from_json(value, "tensor " + key);
        if (j.contains("edges"))
            for (const auto& ej : j.at("edges"))
                e.new_edges.push_back(Edge{ej[0].get<std::int64_t>(), ej[1].get<std::int64_t>(),
                                           ej[2].get<std::int64_t>()});
        return e;
    }
    if (kind == "remove") return RemoveOp{j.at("op").get<std::int64_t>()};
    if (kind == "replace") {
        ReplaceOp e;
        e.op_id = j.at("op").get<std::int64_t>();
        e.node = op_from_json(j.at("node"));
        if (j.contains("new_tensors"))
            for (const auto& [key, value] : j.at("new_tensors").items())
                e.new_tensors[std::stoll(key)] = tensor_from_json(value, "tensor " + key);
        return e;
    }
    if (kind == "resize")
        return ResizeOp{j.at("op").get<std::int64_t>(), j.at("axis").get<int>(),
                        j.at("dim").get<std::int64_t>()};
    if (kind == "parallelize") {
        ParallelizeOps e;
        e.op_ids = j.at("ops").get<std::vector<std::int64_t>>();
        if (j.contains("streams")) e.streams = j.at("streams").get<std::vector<int>>();
        return e;
    }
    if (kind == "fuse_embedding")
        return FuseEmbeddingOps{j.at("ops").get<std::vector<std::int64_t>>()};
    throw Error("unknown edit kind \"" + kind + "\"");
}

}  // namespace

std::vector<GraphEdit> parse_edit_script(std::istream& in) {
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(std::string("edit script parse: ") + e.what());
    }
    if (!doc.contains("edits") || !doc.at("edits").is_array())
        throw Error("edit script: missing \"edits\" array");
    std::vector<GraphEdit> edits;
    for (const auto& ej : doc.at("edits")) edits.push_back(edit_from_json(ej));
    return edits;
}

std::vector<GraphEdit> parse_edit_script(const std::string& text) {
    std::istringstream in(text);
    return parse_edit_script(in);
}

}  // namespace perfmodel
