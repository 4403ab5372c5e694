#include "gatenas/spaces.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "gatenas/errors.hpp"
#include "gatenas/prune.hpp"

namespace gatenas {

std::string_view to_string(SpaceKind kind)
{
    switch (kind) {
    case SpaceKind::kMlp:
        return "mlp";
    case SpaceKind::kOneShotCell:
        return "oneshot_cell";
    case SpaceKind::kFbnetStage:
        return "fbnet_stage";
    }
    return "?";
}

SpaceKind parse_space_kind(std::string_view text)
{
    if (text == "mlp") {
        return SpaceKind::kMlp;
    }
    if (text == "oneshot_cell") {
        return SpaceKind::kOneShotCell;
    }
    if (text == "fbnet_stage") {
        return SpaceKind::kFbnetStage;
    }
    throw ConfigError("unknown space kind '" + std::string(text) + "' (mlp, oneshot_cell, fbnet_stage)");
}

std::string_view to_string(Aggregator agg)
{
    return agg == Aggregator::kAdd ? "add" : "concat";
}

Aggregator parse_aggregator(std::string_view text)
{
    if (text == "add") {
        return Aggregator::kAdd;
    }
    if (text == "concat") {
        return Aggregator::kConcat;
    }
    throw ConfigError("unknown aggregator '" + std::string(text) + "' (add, concat)");
}

std::string OperatorSpec::name() const
{
    return type + std::to_string(kernel) + "x" + std::to_string(kernel);
}

std::vector<OperatorSpec> operator_menu(std::span<const std::string> entries, int default_width)
{
    std::vector<OperatorSpec> menu;
    for (const auto& entry : entries) {
        std::size_t i = 0;
        while (i < entry.size() && std::isalpha(static_cast<unsigned char>(entry[i])) != 0) {
            ++i;
        }
        OperatorSpec spec;
        spec.type = entry.substr(0, i);
        spec.width = default_width;
        const auto x = entry.find('x', i);
        const auto at = entry.find('@', i);
        try {
            if (x == std::string::npos) {
                throw std::invalid_argument("missing kernel");
            }
            spec.kernel = std::stoi(entry.substr(i, x - i));
            const int k2 = std::stoi(entry.substr(x + 1, at == std::string::npos ? std::string::npos : at - x - 1));
            if (k2 != spec.kernel) {
                throw std::invalid_argument("non-square kernel");
            }
            if (at != std::string::npos) {
                spec.width = std::stoi(entry.substr(at + 1));
            }
        } catch (const std::exception&) {
            throw ConfigError("cannot parse operator '" + entry + "' (expected e.g. conv1x1, sep3x3, ib5x5@24)");
        }
        if (spec.type != "conv" && spec.type != "sep" && spec.type != "ib") {
            throw ConfigError("unknown operator type '" + spec.type + "' in '" + entry + "'");
        }
        if (spec.kernel != 1 && spec.kernel != 3 && spec.kernel != 5) {
            throw ConfigError("operator '" + entry + "': kernel must be 1, 3 or 5");
        }
        if (spec.width <= 0) {
            throw ConfigError("operator '" + entry + "': width must be positive");
        }
        auto same = std::find_if(menu.begin(), menu.end(), [&](const OperatorSpec& s) {
            return s.type == spec.type && s.kernel == spec.kernel;
        });
        if (same == menu.end()) {
            menu.push_back(spec);
        } else {
            same->width = std::max(same->width, spec.width);
        }
    }
    return menu;
}

const OperatorInfo* SearchSpace::find_operator(std::string_view id) const
{
    for (const auto& op : operators) {
        if (op.id == id) {
            return &op;
        }
    }
    return nullptr;
}

namespace {

class Builder {
public:
    explicit Builder(SearchSpace& space) : space_(space), g_(space.graph) {}

    NodeId tag(NodeId id)
    {
        if (open_) {
            OperatorInfo& info = space_.operators.back();
            g_.node(id).op = info.id;
            info.nodes.push_back(g_.node(id).name);
            const NodeKind kind = g_.node(id).kind;
            if (kind == NodeKind::kConv || kind == NodeKind::kDense) {
                info.layers.push_back(g_.node(id).name);
            }
        }
        return id;
    }

    NodeId conv_bn(const std::string& name, NodeId in, int units, int kernel, int stride = 1)
    {
        const NodeId c = tag(g_.add_conv(name, in, units, kernel, stride));
        return tag(g_.add_batchnorm(name + "_bn", c));
    }

    NodeId relu(const std::string& name, NodeId in) { return tag(g_.add_relu(name, in)); }

    NodeId dw_bn(const std::string& name, NodeId in, int kernel, int stride)
    {
        const NodeId d = tag(g_.add_depthwise(name, in, kernel, stride));
        return tag(g_.add_batchnorm(name + "_bn", d));
    }

    // Returns the operator's output node.
    NodeId op(const std::string& block, const OperatorSpec& spec, NodeId in, int stride, int expansion)
    {
        space_.operators.push_back(OperatorInfo{block + "/" + spec.name(), block, {}, {}});
        open_ = true;
        const std::string p = space_.operators.back().id + "/";
        const int cin = g_.node(in).shape.channels;
        NodeId out = 0;
        NodeId last_bn = 0;
        if (spec.type == "conv") {
            last_bn = conv_bn(p + "conv", in, spec.width, spec.kernel, stride);
            out = relu(p + "relu", last_bn);
        } else if (spec.type == "sep") {
            const NodeId pw = relu(p + "pw_relu", conv_bn(p + "pw", in, spec.width, 1));
            last_bn = dw_bn(p + "dw", pw, spec.kernel, stride);
            out = relu(p + "relu", last_bn);
        } else {
            const NodeId e = relu(p + "expand_relu", conv_bn(p + "expand", in, expansion * cin, 1));
            const NodeId d = relu(p + "dw_relu", dw_bn(p + "dw", e, spec.kernel, stride));
            last_bn = conv_bn(p + "project", d, spec.width, 1);
            out = last_bn;
        }
        g_.node(last_bn).op_output = true;
        open_ = false;
        return out;
    }

private:
    SearchSpace& space_;
    NetworkGraph& g_;
    bool open_ = false;
};

void check_common(const SpaceConfig& cfg)
{
    if (cfg.classes < 2) {
        throw ConfigError("classes must be at least 2");
    }
    if (cfg.base_width < 1) {
        throw ConfigError("base_width must be positive");
    }
    if (cfg.input.channels < 1 || cfg.input.height < 1 || cfg.input.width < 1) {
        throw ConfigError("input shape must be positive");
    }
}

void build_mlp(SearchSpace& space)
{
    const SpaceConfig& cfg = space.config;
    if (cfg.depth < 1) {
        throw ConfigError("mlp depth must be at least 1");
    }
    if (cfg.input.height != 1 || cfg.input.width != 1) {
        throw ConfigError("mlp spaces take feature vectors (input height and width 1)");
    }
    NetworkGraph& g = space.graph;
    NodeId x = g.add_input("input", cfg.input);
    for (int d = 0; d + 1 < cfg.depth; ++d) {
        const std::string name = "hidden" + std::to_string(d);
        x = g.add_relu(name + "/relu", g.add_dense(name, x, cfg.base_width));
    }
    g.add_softmax_xent("loss", g.add_dense("classifier", x, cfg.classes));
}

void build_oneshot(SearchSpace& space)
{
    const SpaceConfig& cfg = space.config;
    if (cfg.cells < 1 || cfg.blocks < 1) {
        throw ConfigError("cells and blocks must be positive");
    }
    const auto menu = operator_menu(cfg.operators, cfg.base_width);
    if (menu.empty()) {
        throw ConfigError("operator menu is empty");
    }
    if (cfg.aggregator == Aggregator::kAdd) {
        for (const auto& spec : menu) {
            if (spec.width != menu.front().width) {
                throw StructuralError("add aggregator needs equal operator widths, got " + spec.name() + "@" +
                                      std::to_string(spec.width) + " and " + menu.front().name() + "@" +
                                      std::to_string(menu.front().width));
            }
        }
    }
    NetworkGraph& g = space.graph;
    Builder b(space);
    const NodeId in = g.add_input("input", cfg.input);
    NodeId x = b.relu("stem/relu", b.conv_bn("stem", in, cfg.base_width, 3));
    for (int c = 0; c < cfg.cells; ++c) {
        if (c > 0 && cfg.downsample_every > 0 && c % cfg.downsample_every == 0) {
            x = g.add_avgpool("cell" + std::to_string(c) + "/pool", x);
        }
        std::vector<NodeId> cell_inputs{x};
        for (int k = 0; k < cfg.blocks; ++k) {
            const std::string block = "c" + std::to_string(c) + "b" + std::to_string(k);
            space.blocks.push_back(BlockInfo{block, false, {}});
            const NodeId bin = cell_inputs.size() == 1 ? cell_inputs.front() : g.add_concat(block + "/in", cell_inputs);
            std::vector<NodeId> outs;
            for (const auto& spec : menu) {
                outs.push_back(b.op(block, spec, bin, 1, cfg.expansion));
                space.blocks.back().operators.push_back(space.operators.back().id);
            }
            NodeId bout = 0;
            if (cfg.aggregator == Aggregator::kConcat) {
                const NodeId cat = g.add_concat(block + "/concat", outs);
                bout = b.relu(block + "/proj_relu", b.conv_bn(block + "/proj", cat, cfg.base_width, 1));
            } else {
                bout = g.add_add(block + "/add", outs);
            }
            cell_inputs.push_back(bout);
        }
        x = cell_inputs.back();
    }
    g.add_softmax_xent("loss", g.add_dense("classifier", g.add_global_pool("gap", x), cfg.classes));
}

void build_fbnet(SearchSpace& space)
{
    const SpaceConfig& cfg = space.config;
    if (cfg.cells < 1 || cfg.blocks < 1) {
        throw ConfigError("stages and blocks must be positive");
    }
    const auto menu = operator_menu(cfg.operators, cfg.base_width);
    if (menu.empty()) {
        throw ConfigError("operator menu is empty");
    }
    NetworkGraph& g = space.graph;
    Builder b(space);
    const NodeId in = g.add_input("input", cfg.input);
    NodeId x = b.relu("stem/relu", b.conv_bn("stem", in, cfg.base_width, 3));
    for (int s = 0; s < cfg.cells; ++s) {
        const int width = cfg.base_width << s;
        for (int k = 0; k < cfg.blocks; ++k) {
            const std::string block = "s" + std::to_string(s) + "b" + std::to_string(k);
            const int stride = (s > 0 && k == 0) ? 2 : 1;
            const bool bypass = cfg.skip && stride == 1 && g.node(x).shape.channels == width;
            space.blocks.push_back(BlockInfo{block, bypass, {}});
            std::vector<NodeId> addends;
            for (OperatorSpec spec : menu) {
                spec.width = width;
                addends.push_back(b.op(block, spec, x, stride, cfg.expansion));
                space.blocks.back().operators.push_back(space.operators.back().id);
            }
            if (bypass) {
                addends.push_back(x);
            }
            x = g.add_add(block + "/add", addends);
        }
    }
    g.add_softmax_xent("loss", g.add_dense("classifier", g.add_global_pool("gap", x), cfg.classes));
}

} // namespace

SearchSpace build_space(const SpaceConfig& cfg)
{
    check_common(cfg);
    SearchSpace space;
    space.config = cfg;
    switch (cfg.kind) {
    case SpaceKind::kMlp:
        build_mlp(space);
        break;
    case SpaceKind::kOneShotCell:
        build_oneshot(space);
        break;
    case SpaceKind::kFbnetStage:
        build_fbnet(space);
        break;
    }
    return space;
}

const LayerInfo* PreparedSpace::find_layer(std::string_view name) const
{
    for (const auto& l : layers) {
        if (l.name == name) {
            return &l;
        }
    }
    return nullptr;
}

PreparedSpace prepare_space(const SpaceConfig& cfg)
{
    PreparedSpace ps;
    ps.space = build_space(cfg);
    ps.graph = insert_masks(ps.space.graph, cfg.masks);
    ps.groups = assign_groups(ps.graph);
    const auto loss = ps.graph.loss_id();
    for (NodeId id : ps.graph.topological_order()) {
        const Node& node = ps.graph.node(id);
        const bool producer =
            node.kind == NodeKind::kInput || node.kind == NodeKind::kConv || node.kind == NodeKind::kDense;
        if (!producer || (loss && ps.graph.node(*loss).inputs.front() == id)) {
            continue;
        }
        const auto& ids = ps.groups.channel_groups[static_cast<std::size_t>(id)];
        if (std::none_of(ids.begin(), ids.end(), [](int g) { return g >= 0; })) {
            continue;
        }
        ps.layers.push_back(LayerInfo{node.name, id, ids, node.shape.channels, node.op, node.op.empty()});
    }
    return ps;
}

nlohmann::json architecture_to_json(const Architecture& arch)
{
    return {{"widths", arch.widths}, {"operators", arch.operators}};
}

Architecture architecture_from_json(const nlohmann::json& doc)
{
    Architecture arch;
    try {
        arch.widths = doc.at("widths").get<std::map<std::string, int>>();
        if (doc.contains("operators")) {
            arch.operators = doc.at("operators").get<std::map<std::string, bool>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw LoadError(std::string("malformed architecture: ") + e.what());
    }
    return arch;
}

Architecture full_architecture(const PreparedSpace& ps)
{
    return apply_width_multiplier(ps, 1.0);
}

Architecture apply_width_multiplier(const PreparedSpace& ps, double alpha)
{
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw ConfigError("width multiplier must lie in (0, 1], got " + std::to_string(alpha));
    }
    Architecture arch;
    for (const auto& layer : ps.layers) {
        arch.widths[layer.name] =
            std::max(1, static_cast<int>(std::floor(alpha * static_cast<double>(layer.full_width) + 1e-9)));
    }
    for (const auto& op : ps.space.operators) {
        arch.operators[op.id] = true;
    }
    return arch;
}

Architecture sample_random_architecture(const PreparedSpace& ps, Rng& rng)
{
    Architecture arch;
    for (const auto& block : ps.space.blocks) {
        std::vector<bool> keep(block.operators.size());
        for (;;) {
            for (std::size_t i = 0; i < keep.size(); ++i) {
                keep[i] = rng.uniform() < 0.5;
            }
            if (block.has_bypass || std::find(keep.begin(), keep.end(), true) != keep.end()) {
                break;
            }
        }
        for (std::size_t i = 0; i < keep.size(); ++i) {
            arch.operators[block.operators[i]] = keep[i];
        }
    }
    const double alpha = rng.uniform(0.25, 1.0);
    for (const auto& layer : ps.layers) {
        const bool absent = !layer.op.empty() && !arch.operators.at(layer.op);
        arch.widths[layer.name] =
            absent ? 0 : std::max(1, static_cast<int>(std::floor(alpha * static_cast<double>(layer.full_width))));
    }
    return arch;
}

std::vector<double> concat_aggregator_equivalence_weights(int n, int w)
{
    if (n < 1 || w < 1) {
        throw StructuralError("equivalence weights need n >= 1 operators of width >= 1");
    }
    std::vector<double> weights(static_cast<std::size_t>(w) * n * w, 0.0);
    for (int o = 0; o < w; ++o) {
        for (int j = 0; j < n; ++j) {
            weights[static_cast<std::size_t>(o) * n * w + static_cast<std::size_t>(j) * w + o] = 1.0;
        }
    }
    return weights;
}

Materialized materialize(const PreparedSpace& ps, const Architecture& arch, std::span<const double> pi,
                         std::uint64_t seed)
{
    for (const auto& [name, width] : arch.widths) {
        const LayerInfo* layer = ps.find_layer(name);
        if (layer == nullptr) {
            throw StructuralError("architecture names unknown layer '" + name + "'");
        }
        if (width < 0 || width > layer->full_width) {
            throw StructuralError("layer '" + name + "' width " + std::to_string(width) + " outside [0, " +
                                  std::to_string(layer->full_width) + "]");
        }
    }
    for (const auto& [id, present] : arch.operators) {
        if (ps.space.find_operator(id) == nullptr) {
            throw StructuralError("architecture names unknown operator '" + id + "'");
        }
    }
    if (!pi.empty() && pi.size() != ps.groups.size()) {
        throw StructuralError("got " + std::to_string(pi.size()) + " keep probabilities for " +
                              std::to_string(ps.groups.size()) + " groups");
    }

    auto width_of = [&](const LayerInfo& layer) {
        auto it = arch.widths.find(layer.name);
        return it == arch.widths.end() ? layer.full_width : it->second;
    };

    Materialized result;
    std::set<std::string> absent;
    for (const auto& op : ps.space.operators) {
        auto it = arch.operators.find(op.id);
        bool present = it == arch.operators.end() || it->second;
        for (const auto& lname : op.layers) {
            if (const LayerInfo* layer = ps.find_layer(lname); layer != nullptr && width_of(*layer) == 0) {
                present = false;
            }
        }
        result.arch.operators[op.id] = present;
        if (!present) {
            absent.insert(op.id);
        }
    }
    for (const auto& block : ps.space.blocks) {
        const bool any = std::any_of(block.operators.begin(), block.operators.end(),
                                     [&](const std::string& id) { return absent.count(id) == 0; });
        if (!any && !block.has_bypass) {
            throw StructuralError("block '" + block.id + "' has no operators and no bypass");
        }
    }

    PrunePlan plan;
    plan.drop_masks = true;
    for (NodeId id : ps.graph.topological_order()) {
        if (!ps.graph.node(id).op.empty() && absent.count(ps.graph.node(id).op) != 0) {
            plan.remove.insert(id);
        }
    }
    for (const auto& layer : ps.layers) {
        const int width = width_of(layer);
        if (!layer.op.empty() && absent.count(layer.op) != 0) {
            continue;
        }
        if (width == 0) {
            throw StructuralError("mandatory layer '" + layer.name + "' has width 0");
        }
        result.arch.widths[layer.name] = width;
        std::vector<int> order(static_cast<std::size_t>(layer.full_width));
        std::iota(order.begin(), order.end(), 0);
        if (!pi.empty()) {
            auto score = [&](int c) {
                const int g = layer.groups[static_cast<std::size_t>(c)];
                return g >= 0 ? pi[static_cast<std::size_t>(g)] : 1.0;
            };
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return score(a) > score(b); });
        }
        order.resize(static_cast<std::size_t>(width));
        std::sort(order.begin(), order.end());
        plan.keep[layer.node] = std::move(order);
    }
    for (const auto& layer : ps.layers) {
        if (!layer.op.empty() && absent.count(layer.op) != 0) {
            result.arch.widths[layer.name] = 0;
        }
    }

    result.graph = apply_prune(ps.graph, plan).graph;
    Rng rng = make_rng(seed, Stream::kInit);
    result.graph.initialize_parameters(rng);
    return result;
}

double architecture_cost(const PreparedSpace& ps, const Architecture& arch, const CostOptions& options)
{
    return graph_cost(materialize(ps, arch, {}, 0).graph, options);
}

SpaceConfig random_space_config(Rng& rng)
{
    SpaceConfig cfg;
    const auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
    const int kind = pick(0, 3);
    cfg.classes = pick(2, 4);
    cfg.masks.policy = rng.uniform() < 0.75 ? MaskPolicy::kAllConvs : MaskPolicy::kOperatorOutputs;
    if (kind == 0) {
        cfg.kind = SpaceKind::kMlp;
        cfg.depth = pick(2, 4);
        cfg.base_width = pick(2, 5);
        cfg.input = Shape{pick(3, 6), 1, 1};
        cfg.masks.policy = MaskPolicy::kAllConvs;
        cfg.masks.gate_inputs = rng.uniform() < 0.5;
        return cfg;
    }
    cfg.input = Shape{pick(1, 2), 4, 4};
    cfg.base_width = pick(2, 4);
    cfg.blocks = pick(1, 2);
    cfg.cells = pick(1, 2);
    cfg.downsample_every = 1;
    cfg.expansion = 2;
    if (kind == 3) {
        cfg.kind = SpaceKind::kFbnetStage;
        cfg.operators = rng.uniform() < 0.5 ? std::vector<std::string>{"ib3x3"} : std::vector<std::string>{"ib3x3", "ib5x5"};
        return cfg;
    }
    cfg.kind = SpaceKind::kOneShotCell;
    cfg.aggregator = kind == 1 ? Aggregator::kConcat : Aggregator::kAdd;
    const std::vector<std::string> all{"conv1x1", "conv3x3", "sep3x3", "sep5x5", "ib3x3"};
    cfg.operators.clear();
    for (const auto& op : all) {
        if (rng.uniform() < 0.5) {
            cfg.operators.push_back(op);
        }
    }
    if (cfg.operators.empty()) {
        cfg.operators.push_back(all[rng.below(all.size())]);
    }
    return cfg;
}

} // namespace gatenas
