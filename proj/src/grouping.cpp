#include "gatenas/grouping.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>

#include "gatenas/errors.hpp"
#include "gatenas/executor.hpp"
#include "gatenas/prune.hpp"

namespace gatenas {

namespace {

class DisjointSets {
public:
    explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

    std::size_t find(std::size_t x)
    {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }

    // The smaller root wins so the representative is the earliest element.
    void unite(std::size_t a, std::size_t b)
    {
        a = find(a);
        b = find(b);
        if (a == b) {
            return;
        }
        if (b < a) {
            std::swap(a, b);
        }
        parent_[b] = a;
    }

private:
    std::vector<std::size_t> parent_;
};

bool has_channels(const Node& node)
{
    return node.kind != NodeKind::kSoftmaxXent;
}

} // namespace

NetworkGraph insert_masks(const NetworkGraph& graph, const MaskOptions& options)
{
    if (graph.has_masks()) {
        throw StructuralError("graph already contains mask nodes");
    }
    const auto consumers = graph.consumers();
    const auto loss = graph.loss_id();
    const NodeId output = graph.output_id();
    auto is_classifier = [&](NodeId id) { return loss && graph.node(*loss).inputs.front() == id; };

    struct Pending {
        std::string name;
        std::string op;
    };
    std::map<NodeId, Pending> mask_after;
    auto place = [&](NodeId source, NodeId anchor) {
        const Node& src = graph.node(source);
        if (is_classifier(anchor) || anchor == output) {
            throw StructuralError("masking '" + src.name + "' would mask the classifier output");
        }
        mask_after[anchor] = Pending{src.name + "/mask", src.op};
    };

    for (NodeId id : graph.topological_order()) {
        const Node& node = graph.node(id);
        if (options.policy == MaskPolicy::kAllConvs) {
            const bool maskable = node.kind == NodeKind::kConv || node.kind == NodeKind::kDepthwiseConv ||
                                  node.kind == NodeKind::kDense;
            if (!maskable || is_classifier(id)) {
                continue;
            }
            NodeId anchor = id;
            const auto& outs = consumers[static_cast<std::size_t>(id)];
            if (outs.size() == 1 && graph.node(outs.front()).kind == NodeKind::kBatchNorm) {
                anchor = outs.front();
            }
            place(id, anchor);
        } else if (node.op_output) {
            place(id, id);
        }
    }
    if (options.gate_inputs) {
        const NodeId in = graph.input_id();
        mask_after[in] = Pending{graph.node(in).name + "/mask", ""};
    }

    NetworkGraph out;
    std::vector<NodeId> redirect(graph.size(), -1);
    for (NodeId id : graph.topological_order()) {
        Node copy = graph.node(id);
        for (auto& in : copy.inputs) {
            in = redirect[static_cast<std::size_t>(in)];
        }
        NodeId nid = out.add(std::move(copy));
        if (auto it = mask_after.find(id); it != mask_after.end()) {
            Node mask;
            mask.kind = NodeKind::kMask;
            mask.name = it->second.name;
            mask.inputs = {nid};
            mask.op = it->second.op;
            nid = out.add(std::move(mask));
        }
        redirect[static_cast<std::size_t>(id)] = nid;
    }
    return out;
}

GroupMap assign_groups(NetworkGraph& graph)
{
    const std::size_t n = graph.size();
    std::vector<std::size_t> offset(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const Node& node = graph.node(static_cast<NodeId>(i));
        offset[i + 1] = offset[i] + (has_channels(node) ? static_cast<std::size_t>(node.shape.channels) : 0);
    }
    auto element = [&](NodeId id, int c) { return offset[static_cast<std::size_t>(id)] + static_cast<std::size_t>(c); };

    DisjointSets sets(offset[n]);
    std::vector<std::vector<char>> zero(n);
    const auto& order = graph.topological_order();

    for (NodeId id : order) {
        const Node& node = graph.node(id);
        if (!has_channels(node)) {
            continue;
        }
        const int channels = node.shape.channels;
        auto& z = zero[static_cast<std::size_t>(id)];
        z.assign(static_cast<std::size_t>(channels), 0);
        switch (node.kind) {
        case NodeKind::kInput:
        case NodeKind::kConv:
        case NodeKind::kDense:
            break;
        case NodeKind::kBatchNorm:
            for (int c = 0; c < channels; ++c) {
                sets.unite(element(id, c), element(node.inputs.front(), c));
            }
            break;
        case NodeKind::kMask:
            for (int c = 0; c < channels; ++c) {
                sets.unite(element(id, c), element(node.inputs.front(), c));
                z[static_cast<std::size_t>(c)] = 1;
            }
            break;
        case NodeKind::kDepthwiseConv:
        case NodeKind::kRelu:
        case NodeKind::kAvgPool:
        case NodeKind::kGlobalPool: {
            const auto& zin = zero[static_cast<std::size_t>(node.inputs.front())];
            for (int c = 0; c < channels; ++c) {
                sets.unite(element(id, c), element(node.inputs.front(), c));
                z[static_cast<std::size_t>(c)] = zin[static_cast<std::size_t>(c)];
            }
            break;
        }
        case NodeKind::kAdd:
            for (int c = 0; c < channels; ++c) {
                char all = 1;
                for (NodeId in : node.inputs) {
                    sets.unite(element(id, c), element(in, c));
                    all = static_cast<char>(all & zero[static_cast<std::size_t>(in)][static_cast<std::size_t>(c)]);
                }
                z[static_cast<std::size_t>(c)] = all;
            }
            break;
        case NodeKind::kConcat: {
            int base = 0;
            for (NodeId in : node.inputs) {
                const int width = graph.node(in).shape.channels;
                for (int c = 0; c < width; ++c) {
                    sets.unite(element(id, base + c), element(in, c));
                    z[static_cast<std::size_t>(base + c)] = zero[static_cast<std::size_t>(in)][static_cast<std::size_t>(c)];
                }
                base += width;
            }
            break;
        }
        case NodeKind::kSoftmaxXent:
            break;
        }
    }

    std::vector<char> has_mask(offset[n], 0);
    std::vector<char> blocked(offset[n], 0);
    for (NodeId id : order) {
        const Node& node = graph.node(id);
        if (node.kind == NodeKind::kMask) {
            for (int c = 0; c < node.shape.channels; ++c) {
                has_mask[sets.find(element(id, c))] = 1;
            }
        }
        if (node.kind == NodeKind::kConv || node.kind == NodeKind::kDense) {
            const NodeId in = node.inputs.front();
            const auto& zin = zero[static_cast<std::size_t>(in)];
            for (int c = 0; c < graph.node(in).shape.channels; ++c) {
                if (zin[static_cast<std::size_t>(c)] == 0) {
                    blocked[sets.find(element(in, c))] = 1;
                }
            }
        }
    }
    const NodeId output = graph.output_id();
    for (int c = 0; c < graph.node(output).shape.channels; ++c) {
        blocked[sets.find(element(output, c))] = 1;
    }

    GroupMap map;
    map.channel_groups.assign(n, {});
    std::map<std::size_t, int> class_id;
    for (NodeId id : order) {
        const Node& node = graph.node(id);
        if (!has_channels(node)) {
            continue;
        }
        auto& ids = map.channel_groups[static_cast<std::size_t>(id)];
        ids.assign(static_cast<std::size_t>(node.shape.channels), kSentinelGroup);
        for (int c = 0; c < node.shape.channels; ++c) {
            const std::size_t root = sets.find(element(id, c));
            if (!has_mask[root] || blocked[root]) {
                continue;
            }
            auto [it, fresh] = class_id.emplace(root, static_cast<int>(class_id.size()));
            if (fresh) {
                map.groups.push_back(MaskGroup{it->second, {}, {}, {}, {}});
            }
            ids[static_cast<std::size_t>(c)] = it->second;
        }
    }

    std::vector<std::set<int>> up(map.groups.size());
    std::vector<std::set<int>> down(map.groups.size());
    for (NodeId id : order) {
        Node& node = graph.node(id);
        const auto& ids = map.channel_groups[static_cast<std::size_t>(id)];
        switch (node.kind) {
        case NodeKind::kInput:
        case NodeKind::kDepthwiseConv:
            for (int c = 0; c < node.shape.channels; ++c) {
                if (ids[static_cast<std::size_t>(c)] >= 0) {
                    map.groups[static_cast<std::size_t>(ids[static_cast<std::size_t>(c)])].producing.push_back({id, c});
                }
            }
            break;
        case NodeKind::kConv:
        case NodeKind::kDense: {
            const NodeId in = node.inputs.front();
            const auto& in_ids = map.channel_groups[static_cast<std::size_t>(in)];
            for (int c = 0; c < node.shape.channels; ++c) {
                if (ids[static_cast<std::size_t>(c)] >= 0) {
                    map.groups[static_cast<std::size_t>(ids[static_cast<std::size_t>(c)])].producing.push_back({id, c});
                }
            }
            for (std::size_t c = 0; c < in_ids.size(); ++c) {
                if (in_ids[c] >= 0) {
                    map.groups[static_cast<std::size_t>(in_ids[c])].consuming.push_back({id, static_cast<int>(c)});
                }
            }
            for (int o : ids) {
                if (o < 0) {
                    continue;
                }
                for (int i : in_ids) {
                    if (i >= 0 && i != o) {
                        down[static_cast<std::size_t>(i)].insert(o);
                        up[static_cast<std::size_t>(o)].insert(i);
                    }
                }
            }
            break;
        }
        case NodeKind::kMask:
            node.mask_groups = ids;
            break;
        default:
            break;
        }
    }
    for (std::size_t g = 0; g < map.groups.size(); ++g) {
        map.groups[g].upstream.assign(up[g].begin(), up[g].end());
        map.groups[g].downstream.assign(down[g].begin(), down[g].end());
    }
    return map;
}

namespace {

void randomize_for_check(NetworkGraph& graph, Rng& rng)
{
    graph.initialize_parameters(rng);
    for (auto& node : graph.nodes()) {
        for (auto& p : node.params) {
            if (p.name == "gamma") {
                for (auto& v : p.value) {
                    v = rng.uniform(0.5, 1.5);
                }
            } else if (p.name == "beta" || p.name == "bias") {
                for (auto& v : p.value) {
                    v = rng.uniform(-0.5, 0.5);
                }
            }
        }
        for (auto& b : node.buffers) {
            for (auto& v : b.value) {
                v = b.name == "running_var" ? rng.uniform(0.5, 1.5) : rng.uniform(-0.5, 0.5);
            }
        }
    }
}

} // namespace

bool group_zero_equivalence(const NetworkGraph& graph, const GroupMap& map, int group, std::uint64_t seed)
{
    if (group < 0) {
        return true;
    }
    if (static_cast<std::size_t>(group) >= map.size()) {
        return false;
    }
    Rng rng = make_rng(seed, Stream::kCheck);
    NetworkGraph work = graph;
    randomize_for_check(work, rng);

    const MaskGroup& target = map.groups[static_cast<std::size_t>(group)];
    std::map<NodeId, std::set<int>> dropped;
    std::set<std::pair<NodeId, int>> listed_depthwise;
    for (const auto& s : target.producing) {
        if (s.node < 0 || static_cast<std::size_t>(s.node) >= work.size()) {
            return false;
        }
        const NodeKind kind = work.node(s.node).kind;
        if (kind == NodeKind::kInput || kind == NodeKind::kConv || kind == NodeKind::kDense) {
            dropped[s.node].insert(s.channel);
        } else if (kind == NodeKind::kDepthwiseConv) {
            listed_depthwise.insert({s.node, s.channel});
        } else {
            return false;
        }
    }

    PrunePlan plan;
    plan.drop_masks = false;
    for (const auto& [node, channels] : dropped) {
        std::vector<int> keep;
        for (int c = 0; c < work.node(node).shape.channels; ++c) {
            if (channels.count(c) == 0) {
                keep.push_back(c);
            }
        }
        plan.keep[node] = std::move(keep);
    }

    PruneResult pruned;
    try {
        pruned = apply_prune(work, plan);
    } catch (const StructuralError&) {
        return false;
    }

    // The deletion implied by the producing rows must remove exactly the
    // columns and depthwise kernels the map claims for this group.
    std::set<std::pair<NodeId, int>> derived_columns;
    std::set<std::pair<NodeId, int>> derived_depthwise;
    for (NodeId id : work.topological_order()) {
        const Node& node = work.node(id);
        if (node.kind != NodeKind::kConv && node.kind != NodeKind::kDense && node.kind != NodeKind::kDepthwiseConv) {
            continue;
        }
        const NodeId in = node.inputs.front();
        const auto& kept = pruned.kept[static_cast<std::size_t>(in)];
        for (int c = 0; c < work.node(in).shape.channels; ++c) {
            if (!std::binary_search(kept.begin(), kept.end(), c)) {
                (node.kind == NodeKind::kDepthwiseConv ? derived_depthwise : derived_columns).insert({id, c});
            }
        }
    }
    std::set<std::pair<NodeId, int>> listed_columns;
    for (const auto& s : target.consuming) {
        listed_columns.insert({s.node, s.channel});
    }
    if (derived_columns != listed_columns || derived_depthwise != listed_depthwise) {
        return false;
    }

    std::vector<double> masks(map.size());
    for (auto& m : masks) {
        m = rng.uniform(0.5, 1.5);
    }
    masks[static_cast<std::size_t>(group)] = 0.0;

    const Node& in_node = work.node(work.input_id());
    const int batch = 3;
    Tensor x({batch, in_node.source_channels, in_node.shape.height, in_node.shape.width});
    for (auto& v : x.data) {
        v = rng.normal();
    }

    for (Mode mode : {Mode::kEval, Mode::kTrain}) {
        Executor full(work);
        Executor cut(pruned.graph);
        full.forward(x, {}, mode, masks);
        cut.forward(x, {}, mode, masks);
        if (full.output().shape != cut.output().shape || full.output().data != cut.output().data) {
            return false;
        }
    }
    return true;
}

nlohmann::json group_map_to_json(const NetworkGraph& graph, const GroupMap& map)
{
    auto slices = [&](const std::vector<Slice>& list) {
        nlohmann::json out = nlohmann::json::array();
        for (const auto& s : list) {
            out.push_back({graph.node(s.node).name, s.channel});
        }
        return out;
    };
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& g : map.groups) {
        groups.push_back({
            {"id", g.id},
            {"producing", slices(g.producing)},
            {"consuming", slices(g.consuming)},
            {"upstream", g.upstream},
            {"downstream", g.downstream},
        });
    }
    nlohmann::json channels = nlohmann::json::object();
    for (std::size_t i = 0; i < map.channel_groups.size(); ++i) {
        if (!map.channel_groups[i].empty()) {
            channels[graph.node(static_cast<NodeId>(i)).name] = map.channel_groups[i];
        }
    }
    return {{"groups", groups}, {"channels", channels}};
}

} // namespace gatenas
