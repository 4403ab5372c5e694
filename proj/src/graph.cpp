#include "gatenas/graph.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>
#include <unordered_map>

#include "gatenas/errors.hpp"
#include "gatenas/tensor.hpp"

namespace gatenas {

namespace {

struct KindName {
    NodeKind kind;
    std::string_view name;
};

constexpr KindName kKindNames[] = {
    {NodeKind::kInput, "input"},
    {NodeKind::kConv, "conv2d"},
    {NodeKind::kDepthwiseConv, "depthwise_conv2d"},
    {NodeKind::kDense, "dense"},
    {NodeKind::kBatchNorm, "batchnorm"},
    {NodeKind::kRelu, "relu"},
    {NodeKind::kAvgPool, "avgpool"},
    {NodeKind::kGlobalPool, "global_pool"},
    {NodeKind::kAdd, "add"},
    {NodeKind::kConcat, "concat"},
    {NodeKind::kMask, "mask"},
    {NodeKind::kSoftmaxXent, "softmax_xent"},
};

[[noreturn]] void fail(const Node& node, const std::string& what)
{
    throw StructuralError("node '" + node.name + "' (" + std::string(to_string(node.kind)) +
                          "): " + what);
}

std::string shape_text(const Shape& s)
{
    std::ostringstream out;
    out << s.channels << "x" << s.height << "x" << s.width;
    return out.str();
}

void ensure_param(Node& node, std::vector<Param>& list, std::string_view name, std::vector<int> shape,
                  bool decay, double fill)
{
    const std::size_t count = element_count(shape);
    auto it = std::find_if(list.begin(), list.end(), [&](const Param& p) { return p.name == name; });
    if (it == list.end()) {
        list.push_back(Param{std::string(name), std::move(shape), std::vector<double>(count, fill), decay});
        return;
    }
    if (it->value.empty()) {
        it->value.assign(count, fill);
    } else if (it->value.size() != count) {
        fail(node, "parameter '" + std::string(name) + "' has " + std::to_string(it->value.size()) +
                       " values, expected " + std::to_string(count));
    }
    it->shape = std::move(shape);
    it->decay = decay;
}

bool valid_kernel(int k) { return k == 1 || k == 3 || k == 5; }
bool valid_stride(int s) { return s == 1 || s == 2; }

int conv_extent(int extent, int kernel, int stride)
{
    const int pad = kernel / 2;
    return (extent + 2 * pad - kernel) / stride + 1;
}

} // namespace

std::string_view to_string(NodeKind kind)
{
    for (const auto& entry : kKindNames) {
        if (entry.kind == kind) {
            return entry.name;
        }
    }
    return "unknown";
}

NodeKind parse_node_kind(std::string_view text)
{
    for (const auto& entry : kKindNames) {
        if (entry.name == text) {
            return entry.kind;
        }
    }
    throw StructuralError("unknown node kind '" + std::string(text) + "'");
}

bool mixes_channels(NodeKind kind)
{
    return kind == NodeKind::kConv || kind == NodeKind::kDense;
}

Param* Node::find_param(std::string_view pname)
{
    for (auto& p : params) {
        if (p.name == pname) {
            return &p;
        }
    }
    return nullptr;
}

const Param* Node::find_param(std::string_view pname) const
{
    for (const auto& p : params) {
        if (p.name == pname) {
            return &p;
        }
    }
    return nullptr;
}

void NetworkGraph::infer(Node& node) const
{
    auto input_shape = [&](std::size_t i) -> const Shape& { return nodes_.at(node.inputs.at(i)).shape; };
    auto expect_inputs = [&](std::size_t n) {
        if (node.inputs.size() != n) {
            fail(node, "expected " + std::to_string(n) + " input(s), got " + std::to_string(node.inputs.size()));
        }
    };

    switch (node.kind) {
    case NodeKind::kInput: {
        if (!node.inputs.empty()) {
            fail(node, "input nodes take no inputs");
        }
        if (node.source_channels == 0) {
            node.source_channels = node.shape.channels;
        }
        if (!node.input_select.empty()) {
            for (int c : node.input_select) {
                if (c < 0 || c >= node.source_channels) {
                    fail(node, "selected channel " + std::to_string(c) + " out of range");
                }
            }
            node.shape.channels = static_cast<int>(node.input_select.size());
        }
        if (node.shape.channels <= 0 || node.shape.height <= 0 || node.shape.width <= 0) {
            fail(node, "input shape must be positive, got " + shape_text(node.shape));
        }
        break;
    }
    case NodeKind::kConv: {
        expect_inputs(1);
        const Shape& in = input_shape(0);
        if (!valid_kernel(node.kernel) || !valid_stride(node.stride)) {
            fail(node, "unsupported kernel/stride " + std::to_string(node.kernel) + "/" + std::to_string(node.stride));
        }
        if (node.units <= 0) {
            fail(node, "conv needs at least one output channel");
        }
        node.shape = Shape{node.units, conv_extent(in.height, node.kernel, node.stride),
                           conv_extent(in.width, node.kernel, node.stride)};
        ensure_param(node, node.params, "weight", {node.units, in.channels, node.kernel, node.kernel}, true, 0.0);
        break;
    }
    case NodeKind::kDepthwiseConv: {
        expect_inputs(1);
        const Shape& in = input_shape(0);
        if (!valid_kernel(node.kernel) || !valid_stride(node.stride)) {
            fail(node, "unsupported kernel/stride " + std::to_string(node.kernel) + "/" + std::to_string(node.stride));
        }
        node.units = in.channels;
        node.shape = Shape{in.channels, conv_extent(in.height, node.kernel, node.stride),
                           conv_extent(in.width, node.kernel, node.stride)};
        ensure_param(node, node.params, "weight", {in.channels, node.kernel, node.kernel}, true, 0.0);
        break;
    }
    case NodeKind::kDense: {
        expect_inputs(1);
        const Shape& in = input_shape(0);
        if (in.height != 1 || in.width != 1) {
            fail(node, "dense input must be a vector, got " + shape_text(in));
        }
        if (node.units <= 0) {
            fail(node, "dense needs at least one output unit");
        }
        node.kernel = 1;
        node.stride = 1;
        node.shape = Shape{node.units, 1, 1};
        ensure_param(node, node.params, "weight", {node.units, in.channels}, true, 0.0);
        ensure_param(node, node.params, "bias", {node.units}, false, 0.0);
        break;
    }
    case NodeKind::kBatchNorm: {
        expect_inputs(1);
        node.shape = input_shape(0);
        ensure_param(node, node.params, "gamma", {node.shape.channels}, false, 1.0);
        ensure_param(node, node.params, "beta", {node.shape.channels}, false, 0.0);
        ensure_param(node, node.buffers, "running_mean", {node.shape.channels}, false, 0.0);
        ensure_param(node, node.buffers, "running_var", {node.shape.channels}, false, 1.0);
        break;
    }
    case NodeKind::kRelu:
        expect_inputs(1);
        node.shape = input_shape(0);
        break;
    case NodeKind::kMask: {
        expect_inputs(1);
        node.shape = input_shape(0);
        if (node.mask_groups.empty()) {
            node.mask_groups.assign(static_cast<std::size_t>(node.shape.channels), kUnassignedGroup);
        }
        if (static_cast<int>(node.mask_groups.size()) != node.shape.channels) {
            fail(node, "mask has " + std::to_string(node.mask_groups.size()) + " group ids for " +
                           std::to_string(node.shape.channels) + " channels");
        }
        break;
    }
    case NodeKind::kAvgPool: {
        expect_inputs(1);
        const Shape& in = input_shape(0);
        if (in.height < 2 || in.width < 2) {
            fail(node, "2x2 pooling needs spatial extent >= 2, got " + shape_text(in));
        }
        node.shape = Shape{in.channels, in.height / 2, in.width / 2};
        break;
    }
    case NodeKind::kGlobalPool:
        expect_inputs(1);
        node.shape = Shape{input_shape(0).channels, 1, 1};
        break;
    case NodeKind::kAdd: {
        if (node.inputs.empty()) {
            fail(node, "add needs at least one input");
        }
        const Shape& first = input_shape(0);
        for (std::size_t i = 1; i < node.inputs.size(); ++i) {
            if (!(input_shape(i) == first)) {
                fail(node, "tensors that are added must have the same shape: " + shape_text(first) + " vs " +
                               shape_text(input_shape(i)) + " from '" + nodes_.at(node.inputs[i]).name + "'");
            }
        }
        node.shape = first;
        break;
    }
    case NodeKind::kConcat: {
        if (node.inputs.empty()) {
            fail(node, "concat needs at least one input");
        }
        Shape out = input_shape(0);
        for (std::size_t i = 1; i < node.inputs.size(); ++i) {
            const Shape& s = input_shape(i);
            if (s.height != out.height || s.width != out.width) {
                fail(node, "concat inputs disagree spatially: " + shape_text(out) + " vs " + shape_text(s));
            }
            out.channels += s.channels;
        }
        node.shape = out;
        break;
    }
    case NodeKind::kSoftmaxXent: {
        expect_inputs(1);
        const Shape& in = input_shape(0);
        if (in.height != 1 || in.width != 1) {
            fail(node, "softmax cross-entropy expects logits vector, got " + shape_text(in));
        }
        node.shape = Shape{1, 1, 1};
        break;
    }
    }
}

NodeId NetworkGraph::add(Node node)
{
    if (node.name.empty()) {
        throw StructuralError("node names must be non-empty");
    }
    if (find(node.name)) {
        throw StructuralError("duplicate node name '" + node.name + "'");
    }
    const auto id = static_cast<NodeId>(nodes_.size());
    for (NodeId in : node.inputs) {
        if (in < 0 || in >= id) {
            fail(node, "input id " + std::to_string(in) + " does not refer to an earlier node");
        }
    }
    if (node.kind == NodeKind::kInput && std::any_of(nodes_.begin(), nodes_.end(), [](const Node& n) {
            return n.kind == NodeKind::kInput;
        })) {
        fail(node, "graph already has an input node");
    }
    infer(node);
    nodes_.push_back(std::move(node));
    order_.push_back(id);
    return id;
}

NodeId NetworkGraph::add_input(std::string name, Shape shape)
{
    Node n;
    n.kind = NodeKind::kInput;
    n.name = std::move(name);
    n.shape = shape;
    n.source_channels = shape.channels;
    return add(std::move(n));
}

NodeId NetworkGraph::add_conv(std::string name, NodeId input, int units, int kernel, int stride)
{
    Node n;
    n.kind = NodeKind::kConv;
    n.name = std::move(name);
    n.inputs = {input};
    n.units = units;
    n.kernel = kernel;
    n.stride = stride;
    return add(std::move(n));
}

NodeId NetworkGraph::add_depthwise(std::string name, NodeId input, int kernel, int stride)
{
    Node n;
    n.kind = NodeKind::kDepthwiseConv;
    n.name = std::move(name);
    n.inputs = {input};
    n.kernel = kernel;
    n.stride = stride;
    return add(std::move(n));
}

NodeId NetworkGraph::add_dense(std::string name, NodeId input, int units)
{
    Node n;
    n.kind = NodeKind::kDense;
    n.name = std::move(name);
    n.inputs = {input};
    n.units = units;
    return add(std::move(n));
}

namespace {
Node unary(NodeKind kind, std::string name, NodeId input)
{
    Node n;
    n.kind = kind;
    n.name = std::move(name);
    n.inputs = {input};
    return n;
}
} // namespace

NodeId NetworkGraph::add_batchnorm(std::string name, NodeId input)
{
    return add(unary(NodeKind::kBatchNorm, std::move(name), input));
}

NodeId NetworkGraph::add_relu(std::string name, NodeId input)
{
    return add(unary(NodeKind::kRelu, std::move(name), input));
}

NodeId NetworkGraph::add_avgpool(std::string name, NodeId input)
{
    return add(unary(NodeKind::kAvgPool, std::move(name), input));
}

NodeId NetworkGraph::add_global_pool(std::string name, NodeId input)
{
    return add(unary(NodeKind::kGlobalPool, std::move(name), input));
}

NodeId NetworkGraph::add_mask(std::string name, NodeId input)
{
    return add(unary(NodeKind::kMask, std::move(name), input));
}

NodeId NetworkGraph::add_softmax_xent(std::string name, NodeId input)
{
    return add(unary(NodeKind::kSoftmaxXent, std::move(name), input));
}

NodeId NetworkGraph::add_add(std::string name, std::vector<NodeId> inputs)
{
    Node n;
    n.kind = NodeKind::kAdd;
    n.name = std::move(name);
    n.inputs = std::move(inputs);
    return add(std::move(n));
}

NodeId NetworkGraph::add_concat(std::string name, std::vector<NodeId> inputs)
{
    Node n;
    n.kind = NodeKind::kConcat;
    n.name = std::move(name);
    n.inputs = std::move(inputs);
    return add(std::move(n));
}

NetworkGraph NetworkGraph::from_nodes(std::vector<Node> nodes)
{
    const std::size_t n = nodes.size();
    std::vector<int> indegree(n, 0);
    std::vector<std::vector<NodeId>> outs(n);
    std::unordered_map<std::string, NodeId> names;
    int input_nodes = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (nodes[i].name.empty() || !names.emplace(nodes[i].name, static_cast<NodeId>(i)).second) {
            throw StructuralError("duplicate or empty node name '" + nodes[i].name + "'");
        }
        if (nodes[i].kind == NodeKind::kInput) {
            ++input_nodes;
        }
        for (NodeId in : nodes[i].inputs) {
            if (in < 0 || static_cast<std::size_t>(in) >= n) {
                fail(nodes[i], "input id " + std::to_string(in) + " out of range");
            }
            ++indegree[i];
            outs[static_cast<std::size_t>(in)].push_back(static_cast<NodeId>(i));
        }
    }
    if (input_nodes != 1) {
        throw StructuralError("graph must have exactly one input node, found " + std::to_string(input_nodes));
    }

    // Kahn's algorithm; the min-heap makes the order deterministic.
    std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> ready;
    for (std::size_t i = 0; i < n; ++i) {
        if (indegree[i] == 0) {
            ready.push(static_cast<NodeId>(i));
        }
    }
    std::vector<NodeId> order;
    order.reserve(n);
    while (!ready.empty()) {
        const NodeId id = ready.top();
        ready.pop();
        order.push_back(id);
        for (NodeId next : outs[static_cast<std::size_t>(id)]) {
            if (--indegree[static_cast<std::size_t>(next)] == 0) {
                ready.push(next);
            }
        }
    }
    if (order.size() != n) {
        for (std::size_t i = 0; i < n; ++i) {
            if (indegree[i] > 0) {
                throw StructuralError("graph contains a cycle through node '" + nodes[i].name + "'");
            }
        }
    }

    NetworkGraph graph;
    graph.nodes_ = std::move(nodes);
    for (NodeId id : order) {
        graph.infer(graph.nodes_[static_cast<std::size_t>(id)]);
    }
    graph.order_ = std::move(order);
    return graph;
}

std::optional<NodeId> NetworkGraph::find(std::string_view name) const
{
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].name == name) {
            return static_cast<NodeId>(i);
        }
    }
    return std::nullopt;
}

NodeId NetworkGraph::id_of(std::string_view name) const
{
    if (auto id = find(name)) {
        return *id;
    }
    throw StructuralError("no node named '" + std::string(name) + "'");
}

std::vector<std::vector<NodeId>> NetworkGraph::consumers() const
{
    std::vector<std::vector<NodeId>> result(nodes_.size());
    for (NodeId id : order_) {
        for (NodeId in : nodes_[static_cast<std::size_t>(id)].inputs) {
            result[static_cast<std::size_t>(in)].push_back(id);
        }
    }
    return result;
}

NodeId NetworkGraph::input_id() const
{
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].kind == NodeKind::kInput) {
            return static_cast<NodeId>(i);
        }
    }
    throw StructuralError("graph has no input node");
}

std::optional<NodeId> NetworkGraph::loss_id() const
{
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].kind == NodeKind::kSoftmaxXent) {
            return static_cast<NodeId>(i);
        }
    }
    return std::nullopt;
}

NodeId NetworkGraph::output_id() const
{
    if (auto loss = loss_id()) {
        return nodes_[static_cast<std::size_t>(*loss)].inputs.front();
    }
    if (order_.empty()) {
        throw StructuralError("empty graph has no output");
    }
    return order_.back();
}

bool NetworkGraph::has_masks() const
{
    return std::any_of(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.kind == NodeKind::kMask; });
}

std::size_t NetworkGraph::parameter_count() const
{
    std::size_t total = 0;
    for (const auto& node : nodes_) {
        for (const auto& p : node.params) {
            total += p.value.size();
        }
    }
    return total;
}

void NetworkGraph::initialize_parameters(Rng& rng)
{
    for (NodeId id : order_) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        for (auto& p : node.params) {
            if (p.name == "weight") {
                int fan_in = 1;
                if (node.kind == NodeKind::kConv) {
                    fan_in = p.shape[1] * p.shape[2] * p.shape[3];
                } else if (node.kind == NodeKind::kDepthwiseConv) {
                    fan_in = p.shape[1] * p.shape[2];
                } else if (node.kind == NodeKind::kDense) {
                    fan_in = p.shape[1];
                }
                const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
                for (auto& v : p.value) {
                    v = rng.uniform(-bound, bound);
                }
            } else if (p.name == "gamma") {
                std::fill(p.value.begin(), p.value.end(), 1.0);
            } else {
                std::fill(p.value.begin(), p.value.end(), 0.0);
            }
        }
        for (auto& b : node.buffers) {
            std::fill(b.value.begin(), b.value.end(), b.name == "running_var" ? 1.0 : 0.0);
        }
    }
}

nlohmann::json graph_to_json(const NetworkGraph& graph)
{
    using nlohmann::json;
    json nodes = json::array();
    for (const Node& node : graph.nodes()) {
        json j;
        j["name"] = node.name;
        j["kind"] = to_string(node.kind);
        json inputs = json::array();
        for (NodeId in : node.inputs) {
            inputs.push_back(graph.node(in).name);
        }
        j["inputs"] = inputs;
        j["shape"] = {node.shape.channels, node.shape.height, node.shape.width};
        if (node.kind == NodeKind::kConv || node.kind == NodeKind::kDense) {
            j["units"] = node.units;
        }
        if (node.kind == NodeKind::kConv || node.kind == NodeKind::kDepthwiseConv) {
            j["kernel"] = node.kernel;
            j["stride"] = node.stride;
        }
        if (node.kind == NodeKind::kMask) {
            j["mask_groups"] = node.mask_groups;
        }
        if (node.kind == NodeKind::kInput) {
            j["source_channels"] = node.source_channels;
            if (!node.input_select.empty()) {
                j["input_select"] = node.input_select;
            }
        }
        if (!node.op.empty()) {
            j["op"] = node.op;
            j["op_output"] = node.op_output;
        }
        auto tensors = [](const std::vector<Param>& list) {
            json out = json::array();
            for (const auto& p : list) {
                out.push_back(json{{"name", p.name}, {"value", p.value}});
            }
            return out;
        };
        if (!node.params.empty()) {
            j["params"] = tensors(node.params);
        }
        if (!node.buffers.empty()) {
            j["buffers"] = tensors(node.buffers);
        }
        nodes.push_back(std::move(j));
    }
    return json{{"format", "gatenas-graph"}, {"version", 1}, {"nodes", nodes}};
}

NetworkGraph graph_from_json(const nlohmann::json& doc)
{
    using nlohmann::json;
    if (doc.value("format", std::string{}) != "gatenas-graph") {
        throw LoadError("not a serialized graph (missing format tag)");
    }
    const auto& items = doc.at("nodes");
    std::unordered_map<std::string, NodeId> ids;
    for (std::size_t i = 0; i < items.size(); ++i) {
        ids[items[i].at("name").get<std::string>()] = static_cast<NodeId>(i);
    }
    std::vector<Node> nodes;
    nodes.reserve(items.size());
    for (const auto& j : items) {
        Node node;
        node.name = j.at("name").get<std::string>();
        node.kind = parse_node_kind(j.at("kind").get<std::string>());
        for (const auto& in : j.at("inputs")) {
            auto it = ids.find(in.get<std::string>());
            if (it == ids.end()) {
                throw StructuralError("node '" + node.name + "' reads unknown node '" + in.get<std::string>() + "'");
            }
            node.inputs.push_back(it->second);
        }
        const auto shape = j.at("shape").get<std::vector<int>>();
        if (shape.size() != 3) {
            throw LoadError("node '" + node.name + "' has malformed shape");
        }
        node.shape = Shape{shape[0], shape[1], shape[2]};
        node.units = j.value("units", 0);
        node.kernel = j.value("kernel", 1);
        node.stride = j.value("stride", 1);
        node.mask_groups = j.value("mask_groups", std::vector<int>{});
        node.source_channels = j.value("source_channels", 0);
        node.input_select = j.value("input_select", std::vector<int>{});
        if (node.kind == NodeKind::kInput && !node.input_select.empty()) {
            node.shape.channels = node.source_channels;
        }
        node.op = j.value("op", std::string{});
        node.op_output = j.value("op_output", false);
        for (const auto& p : j.value("params", json::array())) {
            node.params.push_back(
                Param{p.at("name").get<std::string>(), {}, p.at("value").get<std::vector<double>>(), false});
        }
        for (const auto& b : j.value("buffers", json::array())) {
            node.buffers.push_back(
                Param{b.at("name").get<std::string>(), {}, b.at("value").get<std::vector<double>>(), false});
        }
        nodes.push_back(std::move(node));
    }
    return NetworkGraph::from_nodes(std::move(nodes));
}

} // namespace gatenas
