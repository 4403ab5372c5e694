#include "gatenas/prune.hpp"

#include <numeric>
#include <string>

#include "gatenas/errors.hpp"

namespace gatenas {

namespace {

std::vector<int> all_channels(int n)
{
    std::vector<int> out(static_cast<std::size_t>(n));
    std::iota(out.begin(), out.end(), 0);
    return out;
}

std::vector<double> take(const std::vector<double>& values, const std::vector<int>& index)
{
    std::vector<double> out;
    out.reserve(index.size());
    for (int i : index) {
        out.push_back(values[static_cast<std::size_t>(i)]);
    }
    return out;
}

// Rows `rows` and columns `cols` of a (R, C, inner) block tensor.
std::vector<double> take_block(const std::vector<double>& values, int cols_total, int inner,
                               const std::vector<int>& rows, const std::vector<int>& cols)
{
    std::vector<double> out;
    out.reserve(rows.size() * cols.size() * static_cast<std::size_t>(inner));
    for (int r : rows) {
        for (int c : cols) {
            const std::size_t base = (static_cast<std::size_t>(r) * cols_total + c) * inner;
            out.insert(out.end(), values.begin() + static_cast<std::ptrdiff_t>(base),
                       values.begin() + static_cast<std::ptrdiff_t>(base + inner));
        }
    }
    return out;
}

void slice_vector_param(std::vector<Param>& list, const std::vector<int>& index)
{
    for (auto& p : list) {
        p.value = take(p.value, index);
        p.shape = {static_cast<int>(index.size())};
    }
}

} // namespace

PruneResult apply_prune(const NetworkGraph& graph, const PrunePlan& plan)
{
    const std::size_t n = graph.size();
    PruneResult result;
    result.kept.assign(n, {});
    result.removed.assign(n, false);
    result.new_id.assign(n, -1);

    for (const auto& [id, channels] : plan.keep) {
        const Node& node = graph.node(id);
        if (node.kind != NodeKind::kInput && node.kind != NodeKind::kConv && node.kind != NodeKind::kDense) {
            throw StructuralError("node '" + node.name + "' does not produce channels; its width follows its input");
        }
        for (std::size_t k = 0; k < channels.size(); ++k) {
            if (channels[k] < 0 || channels[k] >= node.shape.channels || (k > 0 && channels[k] <= channels[k - 1])) {
                throw StructuralError("keep list for '" + node.name + "' must be increasing channel indices");
            }
        }
    }

    NetworkGraph out;
    for (NodeId id : graph.topological_order()) {
        const Node& old = graph.node(id);
        auto& kept = result.kept[static_cast<std::size_t>(id)];
        auto is_removed = [&](NodeId in) { return static_cast<bool>(result.removed[static_cast<std::size_t>(in)]); };
        auto mark_removed = [&]() {
            result.removed[static_cast<std::size_t>(id)] = true;
            kept.clear();
        };

        if (plan.remove.count(id) != 0) {
            mark_removed();
            continue;
        }

        const bool aggregator = old.kind == NodeKind::kAdd || old.kind == NodeKind::kConcat;
        std::vector<NodeId> live_inputs;
        for (NodeId in : old.inputs) {
            if (!is_removed(in)) {
                live_inputs.push_back(in);
            }
        }
        if (aggregator) {
            if (live_inputs.empty()) {
                throw StructuralError("node '" + old.name + "' lost all of its inputs");
            }
        } else if (live_inputs.size() != old.inputs.size()) {
            mark_removed();
            continue;
        }

        auto input_kept = [&](NodeId in) -> const std::vector<int>& { return result.kept[static_cast<std::size_t>(in)]; };

        switch (old.kind) {
        case NodeKind::kInput:
        case NodeKind::kConv:
        case NodeKind::kDense: {
            auto it = plan.keep.find(id);
            kept = it != plan.keep.end() ? it->second : all_channels(old.shape.channels);
            break;
        }
        case NodeKind::kAdd: {
            kept = input_kept(live_inputs.front());
            for (NodeId in : live_inputs) {
                if (input_kept(in) != kept) {
                    throw StructuralError("inputs of add node '" + old.name + "' keep different channels");
                }
            }
            break;
        }
        case NodeKind::kConcat: {
            int offset = 0;
            for (NodeId in : old.inputs) {
                if (!is_removed(in)) {
                    for (int c : input_kept(in)) {
                        kept.push_back(offset + c);
                    }
                }
                offset += graph.node(in).shape.channels;
            }
            break;
        }
        default:
            kept = input_kept(old.inputs.front());
            break;
        }

        if (kept.empty()) {
            if (old.kind == NodeKind::kInput) {
                throw StructuralError("every input channel was pruned");
            }
            mark_removed();
            continue;
        }

        if (old.kind == NodeKind::kMask && plan.drop_masks) {
            result.new_id[static_cast<std::size_t>(id)] = result.new_id[static_cast<std::size_t>(old.inputs.front())];
            continue;
        }

        Node node = old;
        node.inputs.clear();
        for (NodeId in : live_inputs) {
            node.inputs.push_back(result.new_id[static_cast<std::size_t>(in)]);
        }
        const int units = static_cast<int>(kept.size());

        switch (old.kind) {
        case NodeKind::kInput: {
            std::vector<int> select;
            for (int c : kept) {
                select.push_back(old.input_select.empty() ? c : old.input_select[static_cast<std::size_t>(c)]);
            }
            node.input_select = std::move(select);
            node.shape.channels = units;
            break;
        }
        case NodeKind::kConv: {
            const auto& cols = input_kept(old.inputs.front());
            const int in_c = graph.node(old.inputs.front()).shape.channels;
            node.units = units;
            Param* w = node.find_param("weight");
            w->value = take_block(old.find_param("weight")->value, in_c, old.kernel * old.kernel, kept, cols);
            w->shape = {units, static_cast<int>(cols.size()), old.kernel, old.kernel};
            break;
        }
        case NodeKind::kDense: {
            const auto& cols = input_kept(old.inputs.front());
            const int in_c = graph.node(old.inputs.front()).shape.channels;
            node.units = units;
            Param* w = node.find_param("weight");
            w->value = take_block(old.find_param("weight")->value, in_c, 1, kept, cols);
            w->shape = {units, static_cast<int>(cols.size())};
            Param* b = node.find_param("bias");
            b->value = take(old.find_param("bias")->value, kept);
            b->shape = {units};
            break;
        }
        case NodeKind::kDepthwiseConv: {
            Param* w = node.find_param("weight");
            w->value = take_block(old.find_param("weight")->value, 1, old.kernel * old.kernel, kept, {0});
            w->shape = {units, old.kernel, old.kernel};
            break;
        }
        case NodeKind::kBatchNorm:
            slice_vector_param(node.params, kept);
            slice_vector_param(node.buffers, kept);
            break;
        case NodeKind::kMask: {
            std::vector<int> groups;
            for (int c : kept) {
                groups.push_back(old.mask_groups[static_cast<std::size_t>(c)]);
            }
            node.mask_groups = std::move(groups);
            break;
        }
        default:
            break;
        }
        result.new_id[static_cast<std::size_t>(id)] = out.add(std::move(node));
    }

    const NodeId output = graph.output_id();
    if (result.removed[static_cast<std::size_t>(output)]) {
        throw StructuralError("pruning removed the network output '" + graph.node(output).name + "'");
    }
    if (auto loss = graph.loss_id(); loss && result.removed[static_cast<std::size_t>(*loss)]) {
        throw StructuralError("pruning removed the loss node");
    }
    result.graph = std::move(out);
    return result;
}

} // namespace gatenas
