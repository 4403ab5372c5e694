#ifndef GATENAS_CONFIG_HPP
#define GATENAS_CONFIG_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "gatenas/data.hpp"
#include "gatenas/search.hpp"
#include "gatenas/spaces.hpp"

namespace gatenas {

struct BaselineConfig {
    std::vector<double> alphas = {0.25, 0.5, 0.75, 1.0};
    int random_samples = 30;
    double l1_lambda = 1e-4;
};

struct SweepConfig {
    std::vector<double> lambdas;
    int seeds = 1;
    int jobs = 1;
    // 0 uses search.search_epochs.
    int epochs = 0;
};

struct RunConfig {
    SpaceConfig space;
    SearchConfig search;
    DataConfig data;
    BaselineConfig baseline;
    SweepConfig sweep;
    std::filesystem::path output_dir;
    // Directory of the config file; relative paths resolve against it.
    std::filesystem::path base_dir;
};

// Default output root: $GATENAS_OUTPUT_ROOT, else ./runs.
std::filesystem::path default_output_root();

// Sectioned "key = value" text; '#' starts a comment. Unknown sections or
// keys and unparsable values raise ConfigError with the line number.
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                       const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Run config without a file: synthetic data, defaults everywhere.
RunConfig default_config();

// The dataset fixes the input shape and class count of the space.
SpaceConfig space_for_data(SpaceConfig space, const Dataset& data);

std::vector<double> parse_number_list(const std::string& text);

nlohmann::json config_to_json(const RunConfig& cfg);

} // namespace gatenas

#endif // GATENAS_CONFIG_HPP
