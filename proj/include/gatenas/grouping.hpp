#ifndef GATENAS_GROUPING_HPP
#define GATENAS_GROUPING_HPP

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "gatenas/graph.hpp"

namespace gatenas {

enum class MaskPolicy {
    kAllConvs,
    kOperatorOutputs,
};

struct MaskOptions {
    MaskPolicy policy = MaskPolicy::kAllConvs;
    // Also gate the raw input features (feature selection).
    bool gate_inputs = false;
};

// Returns a copy of `graph` with mask nodes inserted. Under kAllConvs every
// conv, depthwise conv and dense output gets a mask, placed after its
// batchnorm when that batchnorm is the only consumer. Under kOperatorOutputs
// only nodes flagged op_output are masked. The classifier feeding the loss is
// never masked; a policy that would mask the network output throws.
NetworkGraph insert_masks(const NetworkGraph& graph, const MaskOptions& options = {});

struct Slice {
    NodeId node = 0;
    int channel = 0;
    bool operator==(const Slice&) const = default;
};

struct MaskGroup {
    int id = 0;
    // Output channels of input/conv/dense/depthwise nodes.
    std::vector<Slice> producing;
    // Input columns of conv/dense nodes that read the group.
    std::vector<Slice> consuming;
    std::vector<int> upstream;
    std::vector<int> downstream;
};

struct GroupMap {
    std::vector<MaskGroup> groups;
    // channel_groups[node][c]: group id, or kSentinelGroup for channels no
    // gate controls. Empty for the loss node.
    std::vector<std::vector<int>> channel_groups;

    [[nodiscard]] std::size_t size() const { return groups.size(); }
};

// Row-column grouping of a masked graph. Channels tied together by
// pass-through nodes, concat and add form one class; a class becomes a group
// when it carries a mask and every read of it from another class (a conv or
// dense column, or the network output) sees exactly zero whenever its masks
// are zero. Other classes are sentinel. Writes the ids into the mask nodes.
GroupMap assign_groups(NetworkGraph& graph);

// Sets group `group` to hard zero (others random in [0.5, 1.5]) and compares
// the output bit-for-bit with the graph where that group's slices are
// physically removed. Sentinel ids return true. A map whose slices do not
// match the graph's structure returns false.
bool group_zero_equivalence(const NetworkGraph& graph, const GroupMap& map, int group, std::uint64_t seed);

nlohmann::json group_map_to_json(const NetworkGraph& graph, const GroupMap& map);

} // namespace gatenas

#endif // GATENAS_GROUPING_HPP
