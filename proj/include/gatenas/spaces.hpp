#ifndef GATENAS_SPACES_HPP
#define GATENAS_SPACES_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatenas/cost.hpp"
#include "gatenas/graph.hpp"
#include "gatenas/grouping.hpp"
#include "gatenas/random.hpp"

namespace gatenas {

enum class SpaceKind { kMlp, kOneShotCell, kFbnetStage };
enum class Aggregator { kAdd, kConcat };

std::string_view to_string(SpaceKind kind);
SpaceKind parse_space_kind(std::string_view text);
std::string_view to_string(Aggregator agg);
Aggregator parse_aggregator(std::string_view text);

struct SpaceConfig {
    SpaceKind kind = SpaceKind::kOneShotCell;
    int cells = 2;
    int blocks = 2;
    int base_width = 16;
    // mlp: number of dense layers including the classifier.
    int depth = 3;
    // Entries like "conv1x1", "sep3x3", "ib5x5", optionally "sep3x3@24" for
    // an explicit width.
    std::vector<std::string> operators = {"conv1x1", "sep3x3", "sep5x5"};
    Aggregator aggregator = Aggregator::kConcat;
    Shape input{1, 8, 8};
    int classes = 10;
    int expansion = 3;
    int downsample_every = 2;
    bool skip = true;
    MaskOptions masks;
};

struct OperatorSpec {
    std::string type;
    int kernel = 1;
    int width = 0;
    [[nodiscard]] std::string name() const;
};

// Parses the menu and drops entries that differ from another only in width,
// keeping the widest.
std::vector<OperatorSpec> operator_menu(std::span<const std::string> entries, int default_width);

struct OperatorInfo {
    std::string id;
    std::string block;
    std::vector<std::string> nodes;
    // Channel-producing nodes (conv/dense) inside the operator.
    std::vector<std::string> layers;
};

struct BlockInfo {
    std::string id;
    bool has_bypass = false;
    std::vector<std::string> operators;
};

struct SearchSpace {
    SpaceConfig config;
    NetworkGraph graph;
    std::vector<OperatorInfo> operators;
    std::vector<BlockInfo> blocks;

    [[nodiscard]] const OperatorInfo* find_operator(std::string_view id) const;
};

SearchSpace build_space(const SpaceConfig& cfg);

struct LayerInfo {
    std::string name;
    NodeId node = 0;
    // Group id per output channel (kSentinelGroup for always-on channels).
    std::vector<int> groups;
    int full_width = 0;
    std::string op;
    // Not inside an operator: the layer can never be dropped.
    bool mandatory = true;
};

// A search space with masks inserted and groups assigned.
struct PreparedSpace {
    SearchSpace space;
    NetworkGraph graph;
    GroupMap groups;
    std::vector<LayerInfo> layers;

    [[nodiscard]] const LayerInfo* find_layer(std::string_view name) const;
};

PreparedSpace prepare_space(const SpaceConfig& cfg);

struct Architecture {
    std::map<std::string, int> widths;
    std::map<std::string, bool> operators;
    bool operator==(const Architecture&) const = default;
};

nlohmann::json architecture_to_json(const Architecture& arch);
Architecture architecture_from_json(const nlohmann::json& doc);

Architecture full_architecture(const PreparedSpace& ps);
// Every maskable width w becomes max(1, floor(alpha * w)).
Architecture apply_width_multiplier(const PreparedSpace& ps, double alpha);
// Operators kept with probability 1/2 (at least one per block without a
// bypass), then one global multiplier alpha ~ U[0.25, 1].
Architecture sample_random_architecture(const PreparedSpace& ps, Rng& rng);

// (w, n*w, 1, 1) projection weights made of n stacked identities, so that
// concat followed by the projection equals the elementwise sum.
std::vector<double> concat_aggregator_equivalence_weights(int n, int w);

struct Materialized {
    NetworkGraph graph;
    Architecture arch;
};

// Standalone network for `arch`: absent operators removed, each layer keeps
// its top-pi channels (lower index on ties; lowest indices when pi is not
// given), masks dropped, parameters freshly initialised from `seed`.
Materialized materialize(const PreparedSpace& ps, const Architecture& arch, std::span<const double> pi,
                         std::uint64_t seed);

// Exact parameter or multiply count of the materialized network.
double architecture_cost(const PreparedSpace& ps, const Architecture& arch, const CostOptions& options);

// Small random space configuration used by property checks.
SpaceConfig random_space_config(Rng& rng);

} // namespace gatenas

#endif // GATENAS_SPACES_HPP
