#ifndef GATENAS_GRAPH_HPP
#define GATENAS_GRAPH_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gatenas/random.hpp"

namespace gatenas {

using NodeId = int;

// Mask channels whose group can never be switched off carry this id and
// always receive mask value 1.
inline constexpr int kSentinelGroup = -1;
// Mask channels inserted but not yet grouped.
inline constexpr int kUnassignedGroup = -2;

struct Shape {
    int channels = 0;
    int height = 1;
    int width = 1;

    [[nodiscard]] int spatial() const { return height * width; }
    [[nodiscard]] int size() const { return channels * height * width; }
    bool operator==(const Shape&) const = default;
};

enum class NodeKind {
    kInput,
    kConv,
    kDepthwiseConv,
    kDense,
    kBatchNorm,
    kRelu,
    kAvgPool,
    kGlobalPool,
    kAdd,
    kConcat,
    kMask,
    kSoftmaxXent,
};

std::string_view to_string(NodeKind kind);
NodeKind parse_node_kind(std::string_view text);

// Conv and dense nodes mix channels; everything else maps channel c of its
// input(s) to channel c of its output (concat with an offset).
bool mixes_channels(NodeKind kind);

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    // Decoupled weight decay applies to this tensor.
    bool decay = false;
};

struct Node {
    NodeKind kind = NodeKind::kInput;
    std::string name;
    std::vector<NodeId> inputs;
    Shape shape;

    // kConv / kDense output channels.
    int units = 0;
    int kernel = 1;
    int stride = 1;

    std::vector<Param> params;
    // Non-trainable state (batchnorm running statistics).
    std::vector<Param> buffers;

    // kMask: group id per channel.
    std::vector<int> mask_groups;

    // kInput: channels of the raw batch, and (optionally) which of them the
    // network actually reads.
    int source_channels = 0;
    std::vector<int> input_select;

    // Search-space metadata: the operator this node belongs to, if any.
    std::string op;
    bool op_output = false;

    [[nodiscard]] Param* find_param(std::string_view name);
    [[nodiscard]] const Param* find_param(std::string_view name) const;
};

// Directed acyclic graph of typed nodes. Nodes are appended in a valid
// topological order by the builder methods; graphs read from disk may list
// nodes in any order and are sorted on load.
class NetworkGraph {
public:
    NetworkGraph() = default;

    NodeId add_input(std::string name, Shape shape);
    NodeId add_conv(std::string name, NodeId input, int units, int kernel, int stride = 1);
    NodeId add_depthwise(std::string name, NodeId input, int kernel, int stride = 1);
    NodeId add_dense(std::string name, NodeId input, int units);
    NodeId add_batchnorm(std::string name, NodeId input);
    NodeId add_relu(std::string name, NodeId input);
    NodeId add_avgpool(std::string name, NodeId input);
    NodeId add_global_pool(std::string name, NodeId input);
    NodeId add_add(std::string name, std::vector<NodeId> inputs);
    NodeId add_concat(std::string name, std::vector<NodeId> inputs);
    NodeId add_mask(std::string name, NodeId input);
    NodeId add_softmax_xent(std::string name, NodeId input);

    // Appends a fully described node. Shape and parameter tensors are
    // (re)derived; existing parameter values are kept when their size fits.
    NodeId add(Node node);

    // Builds a graph from nodes in arbitrary order (inputs refer to indices
    // in `nodes`). Throws StructuralError on cycles or shape conflicts.
    static NetworkGraph from_nodes(std::vector<Node> nodes);

    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] Node& node(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
    [[nodiscard]] std::span<const Node> nodes() const { return nodes_; }
    [[nodiscard]] std::span<Node> nodes() { return nodes_; }

    [[nodiscard]] std::optional<NodeId> find(std::string_view name) const;
    [[nodiscard]] NodeId id_of(std::string_view name) const;

    [[nodiscard]] const std::vector<NodeId>& topological_order() const { return order_; }
    [[nodiscard]] std::vector<std::vector<NodeId>> consumers() const;

    [[nodiscard]] NodeId input_id() const;
    [[nodiscard]] std::optional<NodeId> loss_id() const;
    // The node whose activations are the network output: the loss node's
    // input when a loss node exists, otherwise the last node in order.
    [[nodiscard]] NodeId output_id() const;

    [[nodiscard]] bool has_masks() const;
    [[nodiscard]] std::size_t parameter_count() const;

    // Fan-in scaled uniform init for conv/dense weights; zero biases;
    // batchnorm scale 1, shift 0, running mean 0, running variance 1.
    void initialize_parameters(Rng& rng);

private:
    void infer(Node& node) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> order_;
};

nlohmann::json graph_to_json(const NetworkGraph& graph);
NetworkGraph graph_from_json(const nlohmann::json& doc);

} // namespace gatenas

#endif // GATENAS_GRAPH_HPP
