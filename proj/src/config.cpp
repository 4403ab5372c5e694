#include "gatenas/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "gatenas/errors.hpp"

namespace gatenas {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) {
            throw ConfigError("empty entry in list '" + text + "'");
        }
        out.push_back(item);
    }
    return out;
}

double to_double(const std::string& v)
{
    double out = 0.0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("'" + v + "' is not a number");
    }
    return out;
}

long long to_integer(const std::string& v)
{
    long long out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("'" + v + "' is not an integer");
    }
    return out;
}

int to_int(const std::string& v)
{
    return static_cast<int>(to_integer(v));
}

int to_positive(const std::string& v)
{
    const int n = to_int(v);
    if (n <= 0) {
        throw ConfigError("expected a positive integer, got " + v);
    }
    return n;
}

bool to_bool(const std::string& v)
{
    if (v == "true" || v == "yes" || v == "on" || v == "1") {
        return true;
    }
    if (v == "false" || v == "no" || v == "off" || v == "0") {
        return false;
    }
    throw ConfigError("'" + v + "' is not a boolean");
}

PenaltyMode to_penalty(const std::string& v)
{
    if (v == "expected") {
        return PenaltyMode::kExpected;
    }
    if (v == "sampled") {
        return PenaltyMode::kSampled;
    }
    throw ConfigError("penalty must be expected or sampled, got " + v);
}

ExportMode to_export(const std::string& v)
{
    if (v == "expected") {
        return ExportMode::kExpected;
    }
    if (v == "hard") {
        return ExportMode::kHardSample;
    }
    throw ConfigError("export must be expected or hard, got " + v);
}

MaskPolicy to_policy(const std::string& v)
{
    if (v == "all") {
        return MaskPolicy::kAllConvs;
    }
    if (v == "outputs") {
        return MaskPolicy::kOperatorOutputs;
    }
    throw ConfigError("mask_policy must be all or outputs, got " + v);
}

Shape to_shape(const std::string& v)
{
    const auto dims = split_list(v);
    if (dims.size() != 3) {
        throw ConfigError("input shape must be channels,height,width");
    }
    return Shape{to_positive(dims[0]), to_positive(dims[1]), to_positive(dims[2])};
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table = {
        {"space.kind", [](RunConfig& c, const std::string& v) { c.space.kind = parse_space_kind(v); }},
        {"space.cells", [](RunConfig& c, const std::string& v) { c.space.cells = to_positive(v); }},
        {"space.blocks", [](RunConfig& c, const std::string& v) { c.space.blocks = to_positive(v); }},
        {"space.base_width", [](RunConfig& c, const std::string& v) { c.space.base_width = to_positive(v); }},
        {"space.depth", [](RunConfig& c, const std::string& v) { c.space.depth = to_positive(v); }},
        {"space.operators", [](RunConfig& c, const std::string& v) { c.space.operators = split_list(v); }},
        {"space.aggregator", [](RunConfig& c, const std::string& v) { c.space.aggregator = parse_aggregator(v); }},
        {"space.input", [](RunConfig& c, const std::string& v) { c.space.input = to_shape(v); }},
        {"space.classes", [](RunConfig& c, const std::string& v) { c.space.classes = to_positive(v); }},
        {"space.expansion", [](RunConfig& c, const std::string& v) { c.space.expansion = to_positive(v); }},
        {"space.downsample_every",
         [](RunConfig& c, const std::string& v) { c.space.downsample_every = to_positive(v); }},
        {"space.skip", [](RunConfig& c, const std::string& v) { c.space.skip = to_bool(v); }},
        {"space.mask_policy", [](RunConfig& c, const std::string& v) { c.space.masks.policy = to_policy(v); }},
        {"space.gate_inputs", [](RunConfig& c, const std::string& v) { c.space.masks.gate_inputs = to_bool(v); }},

        {"search.lambda", [](RunConfig& c, const std::string& v) { c.search.lambda = to_double(v); }},
        {"search.tau", [](RunConfig& c, const std::string& v) { c.search.tau = to_double(v); }},
        {"search.logit_init", [](RunConfig& c, const std::string& v) { c.search.logit_init = to_double(v); }},
        {"search.penalty", [](RunConfig& c, const std::string& v) { c.search.penalty = to_penalty(v); }},
        {"search.export", [](RunConfig& c, const std::string& v) { c.search.export_mode = to_export(v); }},
        {"search.search_epochs", [](RunConfig& c, const std::string& v) { c.search.search_epochs = to_int(v); }},
        {"search.retrain_epochs", [](RunConfig& c, const std::string& v) { c.search.retrain_epochs = to_int(v); }},
        {"search.batch_size", [](RunConfig& c, const std::string& v) { c.search.batch_size = to_positive(v); }},
        {"search.learning_rate", [](RunConfig& c, const std::string& v) { c.search.learning_rate = to_double(v); }},
        {"search.lr_decay", [](RunConfig& c, const std::string& v) { c.search.lr_decay = to_double(v); }},
        {"search.lr_decay_epochs",
         [](RunConfig& c, const std::string& v) { c.search.lr_decay_epochs = to_double(v); }},
        {"search.beta1", [](RunConfig& c, const std::string& v) { c.search.beta1 = to_double(v); }},
        {"search.beta2", [](RunConfig& c, const std::string& v) { c.search.beta2 = to_double(v); }},
        {"search.epsilon", [](RunConfig& c, const std::string& v) { c.search.epsilon = to_double(v); }},
        {"search.weight_decay", [](RunConfig& c, const std::string& v) { c.search.weight_decay = to_double(v); }},
        {"search.bn_momentum", [](RunConfig& c, const std::string& v) { c.search.bn_momentum = to_double(v); }},
        {"search.seed",
         [](RunConfig& c, const std::string& v) { c.search.seed = static_cast<std::uint64_t>(to_integer(v)); }},
        {"search.metric", [](RunConfig& c, const std::string& v) { c.search.metric = parse_metric(v); }},
        {"search.count_aux_params",
         [](RunConfig& c, const std::string& v) { c.search.count_aux_params = to_bool(v); }},

        {"data.format", [](RunConfig& c, const std::string& v) { c.data.format = v; }},
        {"data.path", [](RunConfig& c, const std::string& v) { c.data.path = v; }},
        {"data.labels", [](RunConfig& c, const std::string& v) { c.data.labels_path = v; }},
        {"data.eval_fraction", [](RunConfig& c, const std::string& v) { c.data.eval_fraction = to_double(v); }},
        {"data.max_samples", [](RunConfig& c, const std::string& v) { c.data.max_samples = to_int(v); }},
        {"data.classes", [](RunConfig& c, const std::string& v) { c.data.classes = to_int(v); }},
        {"data.normalize", [](RunConfig& c, const std::string& v) { c.data.normalize = to_bool(v); }},
        {"data.split_seed",
         [](RunConfig& c, const std::string& v) { c.data.split_seed = static_cast<std::uint64_t>(to_integer(v)); }},
        {"data.samples", [](RunConfig& c, const std::string& v) { c.data.synthetic.samples = to_positive(v); }},
        {"data.features", [](RunConfig& c, const std::string& v) { c.data.synthetic.features = to_positive(v); }},
        {"data.informative",
         [](RunConfig& c, const std::string& v) { c.data.synthetic.informative = to_positive(v); }},
        {"data.synthetic_classes",
         [](RunConfig& c, const std::string& v) { c.data.synthetic.classes = to_positive(v); }},
        {"data.synthetic_seed",
         [](RunConfig& c, const std::string& v) {
             c.data.synthetic.seed = static_cast<std::uint64_t>(to_integer(v));
         }},

        {"output.dir", [](RunConfig& c, const std::string& v) { c.output_dir = v; }},

        {"baseline.alphas", [](RunConfig& c, const std::string& v) { c.baseline.alphas = parse_number_list(v); }},
        {"baseline.random_samples",
         [](RunConfig& c, const std::string& v) { c.baseline.random_samples = to_positive(v); }},
        {"baseline.l1_lambda", [](RunConfig& c, const std::string& v) { c.baseline.l1_lambda = to_double(v); }},

        {"sweep.lambdas", [](RunConfig& c, const std::string& v) { c.sweep.lambdas = parse_number_list(v); }},
        {"sweep.seeds", [](RunConfig& c, const std::string& v) { c.sweep.seeds = to_positive(v); }},
        {"sweep.jobs", [](RunConfig& c, const std::string& v) { c.sweep.jobs = to_positive(v); }},
        {"sweep.epochs", [](RunConfig& c, const std::string& v) { c.sweep.epochs = to_int(v); }},
    };
    return table;
}

fs::path resolve(const fs::path& base, const std::string& p)
{
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

void validate(RunConfig& cfg)
{
    const SearchConfig& s = cfg.search;
    if (s.tau <= 0.0) {
        throw ConfigError("search.tau must be positive");
    }
    if (s.lambda < 0.0) {
        throw ConfigError("search.lambda must be non-negative");
    }
    if (s.search_epochs < 0 || s.retrain_epochs < 0) {
        throw ConfigError("epoch counts must be non-negative");
    }
    if (s.learning_rate <= 0.0 || s.lr_decay <= 0.0 || s.lr_decay_epochs <= 0.0) {
        throw ConfigError("learning rate schedule values must be positive");
    }
    if (s.bn_momentum < 0.0 || s.bn_momentum >= 1.0) {
        throw ConfigError("search.bn_momentum must lie in [0, 1)");
    }
    if (cfg.data.eval_fraction <= 0.0 || cfg.data.eval_fraction >= 1.0) {
        throw ConfigError("data.eval_fraction must lie in (0, 1)");
    }
    for (double a : cfg.baseline.alphas) {
        if (!(a > 0.0 && a <= 1.0)) {
            throw ConfigError("baseline.alphas must lie in (0, 1]");
        }
    }
    const std::string& f = cfg.data.format;
    if (f != "idx" && f != "csv" && f != "synthetic") {
        throw ConfigError("data.format must be idx, csv or synthetic, got " + f);
    }
    auto check_path = [&](std::string& p, const char* key) {
        if (p.empty()) {
            throw ConfigError(std::string("data.") + key + " is required for format " + f);
        }
        p = resolve(cfg.base_dir, p).string();
        if (!fs::exists(p)) {
            throw ConfigError(std::string("data.") + key + " does not exist: " + p);
        }
    };
    if (f == "idx") {
        check_path(cfg.data.path, "path");
        check_path(cfg.data.labels_path, "labels");
    } else if (f == "csv") {
        check_path(cfg.data.path, "path");
    }
}

} // namespace

fs::path default_output_root()
{
    const char* env = std::getenv("GATENAS_OUTPUT_ROOT");
    return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

SpaceConfig space_for_data(SpaceConfig space, const Dataset& data)
{
    const Tensor& x = data.train_x;
    space.input = Shape{x.dim(1), x.dim(2), x.dim(3)};
    space.classes = data.classes;
    return space;
}

std::vector<double> parse_number_list(const std::string& text)
{
    std::vector<double> out;
    for (const auto& item : split_list(text)) {
        out.push_back(to_double(item));
    }
    return out;
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir, const std::string& source)
{
    RunConfig cfg;
    cfg.base_dir = base_dir;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const std::string where = source + ":" + std::to_string(lineno) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(where + "malformed section header");
            }
            section = trim(line.substr(1, line.size() - 2));
            static const char* known[] = {"space", "search", "data", "output", "baseline", "sweep"};
            if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
                throw ConfigError(where + "unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(where + "expected key = value");
        }
        if (section.empty()) {
            throw ConfigError(where + "key outside of a section");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = setters().find(section + "." + key);
        if (it == setters().end()) {
            throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
        }
        try {
            it->second(cfg, value);
        } catch (const ConfigError& e) {
            throw ConfigError(where + key + ": " + e.what());
        }
    }
    validate(cfg);
    if (!cfg.output_dir.empty()) {
        cfg.output_dir = resolve(base_dir, cfg.output_dir.string());
    }
    return cfg;
}

RunConfig load_config(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    RunConfig cfg = parse_config(buf.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path(),
                                 path.string());
    if (cfg.output_dir.empty()) {
        cfg.output_dir = default_output_root() / path.stem();
    }
    return cfg;
}

RunConfig default_config()
{
    RunConfig cfg;
    cfg.base_dir = ".";
    cfg.output_dir = default_output_root() / "default";
    return cfg;
}

nlohmann::json config_to_json(const RunConfig& cfg)
{
    const SpaceConfig& sp = cfg.space;
    const SearchConfig& s = cfg.search;
    return {
        {"space",
         {{"kind", to_string(sp.kind)},
          {"cells", sp.cells},
          {"blocks", sp.blocks},
          {"base_width", sp.base_width},
          {"depth", sp.depth},
          {"operators", sp.operators},
          {"aggregator", to_string(sp.aggregator)},
          {"input", {sp.input.channels, sp.input.height, sp.input.width}},
          {"classes", sp.classes},
          {"expansion", sp.expansion},
          {"downsample_every", sp.downsample_every},
          {"skip", sp.skip},
          {"mask_policy", sp.masks.policy == MaskPolicy::kAllConvs ? "all" : "outputs"},
          {"gate_inputs", sp.masks.gate_inputs}}},
        {"search",
         {{"lambda", s.lambda},
          {"tau", s.tau},
          {"logit_init", s.logit_init},
          {"penalty", s.penalty == PenaltyMode::kExpected ? "expected" : "sampled"},
          {"export", s.export_mode == ExportMode::kExpected ? "expected" : "hard"},
          {"search_epochs", s.search_epochs},
          {"retrain_epochs", s.retrain_epochs},
          {"batch_size", s.batch_size},
          {"learning_rate", s.learning_rate},
          {"lr_decay", s.lr_decay},
          {"lr_decay_epochs", s.lr_decay_epochs},
          {"beta1", s.beta1},
          {"beta2", s.beta2},
          {"epsilon", s.epsilon},
          {"weight_decay", s.weight_decay},
          {"bn_momentum", s.bn_momentum},
          {"seed", s.seed},
          {"metric", to_string(s.metric)},
          {"count_aux_params", s.count_aux_params}}},
        {"data",
         {{"format", cfg.data.format},
          {"path", cfg.data.path},
          {"labels", cfg.data.labels_path},
          {"eval_fraction", cfg.data.eval_fraction},
          {"max_samples", cfg.data.max_samples},
          {"classes", cfg.data.classes},
          {"normalize", cfg.data.normalize},
          {"split_seed", cfg.data.split_seed},
          {"synthetic",
           {{"samples", cfg.data.synthetic.samples},
            {"features", cfg.data.synthetic.features},
            {"informative", cfg.data.synthetic.informative},
            {"classes", cfg.data.synthetic.classes},
            {"seed", cfg.data.synthetic.seed}}}}},
        {"baseline",
         {{"alphas", cfg.baseline.alphas},
          {"random_samples", cfg.baseline.random_samples},
          {"l1_lambda", cfg.baseline.l1_lambda}}},
        {"sweep",
         {{"lambdas", cfg.sweep.lambdas},
          {"seeds", cfg.sweep.seeds},
          {"jobs", cfg.sweep.jobs},
          {"epochs", cfg.sweep.epochs}}},
        {"output", {{"dir", cfg.output_dir.string()}}},
    };
}

} // namespace gatenas
