#ifndef GATENAS_PRUNE_HPP
#define GATENAS_PRUNE_HPP

#include <map>
#include <set>
#include <vector>

#include "gatenas/graph.hpp"

namespace gatenas {

// Structural deletion. `keep` lists, for channel-producing nodes (input,
// conv, dense), which output channels survive; unlisted producers keep all.
// Every other node's channels follow from its inputs. Nodes in `remove`
// disappear together with everything that depends on them only through a
// single path; add/concat nodes simply lose the removed inputs.
struct PrunePlan {
    std::map<NodeId, std::vector<int>> keep;
    std::set<NodeId> remove;
    bool drop_masks = true;
};

struct PruneResult {
    NetworkGraph graph;
    // Per original node: surviving original channel indices, empty when the
    // node was removed.
    std::vector<std::vector<int>> kept;
    std::vector<bool> removed;
    // Original node id -> id in the pruned graph (-1 when gone).
    std::vector<NodeId> new_id;
};

PruneResult apply_prune(const NetworkGraph& graph, const PrunePlan& plan);

} // namespace gatenas

#endif // GATENAS_PRUNE_HPP
