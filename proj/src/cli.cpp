#include "gatenas/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gatenas/config.hpp"
#include "gatenas/cost.hpp"
#include "gatenas/errors.hpp"
#include "gatenas/report.hpp"
#include "gatenas/search.hpp"
#include "gatenas/verify.hpp"

namespace gatenas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw LoadError("cannot open " + path.string());
    }
    try {
        json doc;
        in >> doc;
        return doc;
    } catch (const json::exception& e) {
        throw LoadError("cannot parse " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& doc)
{
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    out << doc.dump(2) << '\n';
    if (!out) {
        throw LoadError("cannot write " + path.string());
    }
}

// Append-only JSON lines; every record is flushed so an interrupted run keeps
// its history.
class JsonLines {
public:
    explicit JsonLines(const fs::path& path)
    {
        fs::create_directories(path.parent_path());
        out_.open(path, std::ios::trunc);
    }
    void write(const json& record)
    {
        out_ << record.dump() << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

std::string format_number(double v)
{
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

struct Common {
    std::string config;
    std::string output;
    std::optional<double> lambda;
    std::optional<std::uint64_t> seed;
    std::optional<int> search_epochs;
    std::optional<int> retrain_epochs;
};

void add_common(CLI::App* cmd, Common& c)
{
    cmd->add_option("-c,--config", c.config, "Run configuration file");
    cmd->add_option("-o,--output", c.output, "Output directory (overrides the config)");
    cmd->add_option("--lambda", c.lambda, "Cost penalty strength");
    cmd->add_option("--seed", c.seed, "Run seed");
    cmd->add_option("--search-epochs", c.search_epochs, "Architecture learning epochs");
    cmd->add_option("--retrain-epochs", c.retrain_epochs, "Retraining epochs");
}

RunConfig resolve_config(const Common& c)
{
    RunConfig cfg = c.config.empty() ? default_config() : load_config(c.config);
    if (!c.output.empty()) {
        cfg.output_dir = c.output;
    }
    if (c.lambda) {
        if (*c.lambda < 0.0) {
            throw ConfigError("--lambda must be non-negative");
        }
        cfg.search.lambda = *c.lambda;
    }
    if (c.seed) {
        cfg.search.seed = *c.seed;
    }
    if (c.search_epochs) {
        cfg.search.search_epochs = *c.search_epochs;
    }
    if (c.retrain_epochs) {
        cfg.search.retrain_epochs = *c.retrain_epochs;
    }
    return cfg;
}

struct Context {
    RunConfig cfg;
    Dataset data;
    PreparedSpace ps;
};

Context load_context(const RunConfig& cfg)
{
    Context ctx{cfg, load_dataset(cfg.data), {}};
    ctx.cfg.space = space_for_data(ctx.cfg.space, ctx.data);
    ctx.ps = prepare_space(ctx.cfg.space);
    return ctx;
}

json result_json(const ArchitecturePoint& point, const TrainResult& r)
{
    json j = point_to_json(point);
    j["final_loss"] = r.final_loss;
    j["best_accuracy"] = r.best_accuracy;
    j["retrain_epochs"] = r.history.epochs.size();
    return j;
}

json cost_json(const PreparedSpace& ps, const SearchConfig& s, std::span<const double> pi, const NetworkGraph& model)
{
    const CostModel cost = cost_terms(ps.graph, ps.groups, cost_options(s));
    std::vector<double> full(ps.groups.size(), 1.0);
    return {{"metric", to_string(s.metric)},
            {"exported", graph_cost(model, cost_options(s))},
            {"supernet", expected_cost(cost, full) + cost.fixed},
            {"expected", cost_report_to_json(make_cost_report(cost, pi))}};
}

void write_history(const fs::path& path, const RunHistory& history)
{
    JsonLines lines(path);
    for (const auto& rec : history.epochs) {
        lines.write(epoch_to_json(rec));
    }
}

std::vector<double> export_pi(const GateSet& gates, const SearchConfig& s)
{
    std::vector<double> pi = gates.probabilities();
    if (s.export_mode == ExportMode::kHardSample) {
        Rng rng = make_rng(s.seed, Stream::kArchitecture);
        pi = sample_hard_masks(pi, rng);
    }
    return pi;
}

int cmd_search(const Common& common, std::ostream& out)
{
    const RunConfig cfg = resolve_config(common);
    Context ctx = load_context(cfg);
    const SearchConfig& s = ctx.cfg.search;
    const fs::path dir = ctx.cfg.output_dir;
    fs::create_directories(dir);
    write_json(dir / "config.json", config_to_json(ctx.cfg));

    const CostModel cost = cost_terms(ctx.ps.graph, ctx.ps.groups, cost_options(s));
    out << "groups " << ctx.ps.groups.size() << ", initial penalty ratio "
        << format_number(initial_penalty_ratio(ctx.ps, cost, ctx.data, s)) << '\n';

    JsonLines history(dir / "history.jsonl");
    const SearchOutcome res = run_search(ctx.ps, ctx.data, s, [&](const EpochRecord& rec) {
        history.write(epoch_to_json(rec));
        out << "epoch " << rec.epoch << " loss " << format_number(rec.task_loss) << " cost "
            << format_number(rec.total_cost) << " acc " << format_number(rec.eval_accuracy) << '\n';
    });
    for (const auto& w : res.exported.warnings) {
        out << "warning: " << w << '\n';
    }

    const std::vector<double> pi = export_pi(res.learned.gates, s);
    write_json(dir / "gates.json", gates_to_json(res.learned.gates));
    write_json(dir / "state.json", {{"graph", graph_to_json(res.learned.graph)},
                                    {"gates", gates_to_json(res.learned.gates)},
                                    {"optimizer", optimizer_to_json(res.learned.optimizer)}});
    write_json(dir / "arch.json", architecture_to_json(res.exported.arch));
    write_json(dir / "cost_report.json", cost_json(ctx.ps, s, pi, res.materialized));
    write_history(dir / "retrain_history.jsonl", res.retrained.history);
    write_json(dir / "model.json", graph_to_json(res.retrained.model));
    const ArchitecturePoint point{"search", res.exported.arch, res.cost, res.retrained.final_accuracy, s.seed,
                                  s.lambda};
    write_json(dir / "result.json", result_json(point, res.retrained));
    out << "exported cost " << format_number(res.cost) << ", accuracy "
        << format_number(res.retrained.final_accuracy) << '\n';
    return 0;
}

int cmd_export(const Common& common, const std::string& gates_path, std::ostream& out)
{
    const RunConfig cfg = resolve_config(common);
    Context ctx = load_context(cfg);
    const SearchConfig& s = ctx.cfg.search;
    const GateSet gates = gates_from_json(read_json(gates_path));
    if (gates.size() != ctx.ps.groups.size()) {
        throw ConfigError("gates file has " + std::to_string(gates.size()) + " groups, the space has " +
                          std::to_string(ctx.ps.groups.size()));
    }
    const std::vector<double> pi = export_pi(gates, s);
    const ExportResult exported = export_architecture(ctx.ps, pi);
    for (const auto& w : exported.warnings) {
        out << "warning: " << w << '\n';
    }
    const Materialized m = materialize(ctx.ps, exported.arch, pi, s.seed);
    const fs::path dir = ctx.cfg.output_dir;
    write_json(dir / "arch.json", architecture_to_json(m.arch));
    write_json(dir / "cost_report.json", cost_json(ctx.ps, s, pi, m.graph));
    out << "exported cost " << format_number(graph_cost(m.graph, cost_options(s))) << '\n';
    return 0;
}

int cmd_retrain(const Common& common, const std::string& arch_path, const std::string& gates_path,
                std::ostream& out)
{
    const RunConfig cfg = resolve_config(common);
    Context ctx = load_context(cfg);
    const SearchConfig& s = ctx.cfg.search;
    const Architecture arch = architecture_from_json(read_json(arch_path));
    std::vector<double> pi;
    if (!gates_path.empty()) {
        pi = gates_from_json(read_json(gates_path)).probabilities();
    }
    const Materialized m = materialize(ctx.ps, arch, pi, s.seed);
    const fs::path dir = ctx.cfg.output_dir;
    JsonLines history(dir / "retrain_history.jsonl");
    const TrainResult r = retrain(m.graph, ctx.data, s, [&](const EpochRecord& rec) {
        history.write(epoch_to_json(rec));
        out << "epoch " << rec.epoch << " loss " << format_number(rec.task_loss) << " acc "
            << format_number(rec.eval_accuracy) << '\n';
    });
    const double cost = graph_cost(m.graph, cost_options(s));
    write_json(dir / "arch.json", architecture_to_json(m.arch));
    write_json(dir / "model.json", graph_to_json(r.model));
    write_json(dir / "result.json", result_json(ArchitecturePoint{"retrain", m.arch, cost, r.final_accuracy, s.seed,
                                                                  s.lambda},
                                                r));
    out << "cost " << format_number(cost) << ", accuracy " << format_number(r.final_accuracy) << '\n';
    return 0;
}

int cmd_evaluate(const Common& common, const std::string& model_path, std::ostream& out)
{
    const RunConfig cfg = resolve_config(common);
    const Dataset data = load_dataset(cfg.data);
    const NetworkGraph model = graph_from_json(read_json(model_path));
    const double acc = evaluate_accuracy(model, data);
    const json doc{{"model", model_path},
                   {"accuracy", acc},
                   {"samples", data.eval_y.size()},
                   {"cost", graph_cost(model, cost_options(cfg.search))},
                   {"metric", to_string(cfg.search.metric)}};
    write_json(cfg.output_dir / "evaluation.json", doc);
    out << doc.dump() << '\n';
    return 0;
}

int cmd_baseline(const Common& common, const std::string& method, std::ostream& out)
{
    const RunConfig cfg = resolve_config(common);
    Context ctx = load_context(cfg);
    const SearchConfig& s = ctx.cfg.search;
    const fs::path dir = ctx.cfg.output_dir / "baseline" / method;
    json points = json::array();
    auto emit = [&](const ArchitecturePoint& p) {
        points.push_back(point_to_json(p));
        out << p.method << " cost " << format_number(p.cost) << " accuracy " << format_number(p.accuracy) << '\n';
    };
    if (method == "width") {
        for (double alpha : ctx.cfg.baseline.alphas) {
            emit(width_multiplier_baseline(ctx.ps, alpha, ctx.data, s));
        }
    } else if (method == "random") {
        for (const auto& p : random_search(ctx.ps, ctx.cfg.baseline.random_samples, ctx.data, s)) {
            emit(p);
        }
    } else {
        SearchConfig l1 = s;
        l1.lambda = ctx.cfg.baseline.l1_lambda;
        const CostModel cost = cost_terms(ctx.ps.graph, ctx.ps.groups, cost_options(l1));
        const L1Result res = l1_baseline(ctx.ps, cost, ctx.data, l1);
        write_history(dir / "history.jsonl", res.history);
        std::vector<double> magnitude(res.gates.size());
        for (std::size_t i = 0; i < magnitude.size(); ++i) {
            magnitude[i] = std::abs(res.gates[i]);
        }
        const Materialized m = materialize(ctx.ps, res.exported.arch, magnitude, l1.seed);
        const TrainResult r = retrain(m.graph, ctx.data, l1);
        emit(ArchitecturePoint{"l1", m.arch, graph_cost(m.graph, cost_options(l1)), r.final_accuracy, l1.seed,
                               l1.lambda});
    }
    write_json(dir / "result.json", points);
    return 0;
}

int cmd_sweep(const Common& common, const std::string& lambdas, int seeds, int jobs, int epochs, std::ostream& out)
{
    RunConfig cfg = resolve_config(common);
    if (!lambdas.empty()) {
        cfg.sweep.lambdas = parse_number_list(lambdas);
    }
    if (seeds > 0) {
        cfg.sweep.seeds = seeds;
    }
    if (jobs > 0) {
        cfg.sweep.jobs = jobs;
    }
    if (epochs > 0) {
        cfg.sweep.epochs = epochs;
    }
    if (cfg.sweep.lambdas.empty()) {
        throw ConfigError("sweep needs lambdas (--lambdas or [sweep] lambdas)");
    }
    for (double l : cfg.sweep.lambdas) {
        if (l < 0.0) {
            throw ConfigError("sweep lambdas must be non-negative");
        }
    }
    Context ctx = load_context(cfg);
    std::vector<SweepJob> sweep;
    for (double l : ctx.cfg.sweep.lambdas) {
        for (int k = 0; k < ctx.cfg.sweep.seeds; ++k) {
            sweep.push_back(SweepJob{l, ctx.cfg.search.seed + static_cast<std::uint64_t>(k), ctx.cfg.sweep.epochs});
        }
    }
    const fs::path dir = ctx.cfg.output_dir / "sweep";
    auto run_dir = [&](std::size_t i) {
        return dir / ("lambda_" + format_number(sweep[i].lambda) + "_seed_" + std::to_string(sweep[i].seed));
    };
    std::mutex log;
    const auto points = pareto_sweep(ctx.ps, ctx.data, ctx.cfg.search, sweep, ctx.cfg.sweep.jobs,
                                     [&](std::size_t i, const SearchOutcome& res) {
                                         const fs::path d = run_dir(i);
                                         write_history(d / "history.jsonl", res.learned.history);
                                         write_json(d / "gates.json", gates_to_json(res.learned.gates));
                                         write_json(d / "arch.json", architecture_to_json(res.exported.arch));
                                         const ArchitecturePoint p{"search", res.exported.arch, res.cost,
                                                                   res.retrained.final_accuracy, sweep[i].seed,
                                                                   sweep[i].lambda};
                                         write_json(d / "result.json", result_json(p, res.retrained));
                                         std::lock_guard lock(log);
                                         out << "lambda " << format_number(p.lambda) << " seed " << p.seed
                                             << " cost " << format_number(p.cost) << " accuracy "
                                             << format_number(p.accuracy) << '\n';
                                     });
    fs::create_directories(dir);
    std::ofstream csv(dir / "summary.csv");
    csv << "lambda,cost,accuracy,seed\n" << std::setprecision(17);
    for (const auto& p : points) {
        csv << format_number(p.lambda) << ',' << p.cost << ',' << p.accuracy << ',' << p.seed << '\n';
    }
    return 0;
}

int cmd_verify(std::uint64_t seed, std::ostream& out)
{
    const auto items = run_verification(seed, &out);
    const bool ok = std::all_of(items.begin(), items.end(), [](const VerifyItem& i) { return i.passed; });
    out << (ok ? "all checks passed" : "some checks failed") << '\n';
    return ok ? 0 : 1;
}

int cmd_report(const Common& common, const std::string& root, const std::string& csv, std::ostream& out)
{
    fs::path base = root;
    if (base.empty()) {
        base = common.config.empty() && common.output.empty() ? default_output_root()
                                                              : resolve_config(common).output_dir;
    }
    const fs::path target = csv.empty() ? base / "pareto.csv" : fs::path(csv);
    const std::size_t rows = write_report(base, target);
    out << rows << " rows written to " << target.string() << '\n';
    return 0;
}

json error_record(const std::string& type, const std::string& message, int code)
{
    return {{"error", {{"type", type}, {"message", message}, {"exit_code", code}}}};
}

} // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Channel-level differentiable architecture search"};
    app.require_subcommand(1);
    Common common;

    auto* search = app.add_subcommand("search", "Learn an architecture, export it and retrain it");
    add_common(search, common);

    std::string gates_path;
    auto* exp = app.add_subcommand("export", "Export an architecture from learned gates");
    add_common(exp, common);
    exp->add_option("--gates", gates_path, "gates.json from a search run")->required();

    std::string arch_path;
    auto* re = app.add_subcommand("retrain", "Retrain an exported architecture from scratch");
    add_common(re, common);
    re->add_option("--arch", arch_path, "arch.json")->required();
    re->add_option("--gates", gates_path, "gates.json used to rank channels");

    std::string model_path;
    auto* ev = app.add_subcommand("evaluate", "Accuracy of a trained model on the eval split");
    add_common(ev, common);
    ev->add_option("--model", model_path, "model.json")->required();

    std::string method;
    auto* base = app.add_subcommand("baseline", "Width-multiplier, random-search or L1 baselines");
    add_common(base, common);
    base->add_option("--method", method, "width | random | l1")
        ->required()
        ->check(CLI::IsMember({"width", "random", "l1"}));

    std::string lambdas;
    int seeds = 0;
    int jobs = 0;
    int epochs = 0;
    auto* sw = app.add_subcommand("sweep", "Search over a grid of lambdas and seeds");
    add_common(sw, common);
    sw->add_option("--lambdas", lambdas, "Comma-separated lambda values");
    sw->add_option("--seeds", seeds, "Seeds per lambda")->check(CLI::PositiveNumber);
    sw->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);
    sw->add_option("--epochs", epochs, "Architecture learning epochs per run")->check(CLI::PositiveNumber);

    std::uint64_t verify_seed = 0;
    auto* ver = app.add_subcommand("verify", "Run the built-in gradient, cost and sampler checks");
    ver->add_option("--seed", verify_seed, "Check seed");

    std::string root;
    std::string csv;
    auto* rep = app.add_subcommand("report", "Collect result.json files into a CSV");
    rep->add_option("-c,--config", common.config, "Run configuration file");
    rep->add_option("-o,--output", common.output, "Output directory to scan");
    rep->add_option("--root", root, "Directory to scan (overrides --output)");
    rep->add_option("--csv", csv, "CSV path (default <root>/pareto.csv)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << error_record("usage", e.what(), 2).dump() << '\n';
        return 2;
    }

    fs::path output_dir;
    try {
        if (!common.output.empty()) {
            output_dir = common.output;
        } else if (!common.config.empty()) {
            output_dir = resolve_config(common).output_dir;
        }
    } catch (...) {
        // Reported below, into the default run directory.
        output_dir = default_output_root() / fs::path(common.config).stem();
    }

    auto fail = [&](const std::string& type, const std::string& message, int code) {
        const json record = error_record(type, message, code);
        err << record.dump() << '\n';
        if (!output_dir.empty()) {
            try {
                write_json(output_dir / "error.json", record);
            } catch (...) {
            }
        }
        return code;
    };

    try {
        if (search->parsed()) {
            return cmd_search(common, out);
        }
        if (exp->parsed()) {
            return cmd_export(common, gates_path, out);
        }
        if (re->parsed()) {
            return cmd_retrain(common, arch_path, gates_path, out);
        }
        if (ev->parsed()) {
            return cmd_evaluate(common, model_path, out);
        }
        if (base->parsed()) {
            return cmd_baseline(common, method, out);
        }
        if (sw->parsed()) {
            return cmd_sweep(common, lambdas, seeds, jobs, epochs, out);
        }
        if (ver->parsed()) {
            return cmd_verify(verify_seed, out);
        }
        return cmd_report(common, root, csv, out);
    } catch (const ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const LoadError& e) {
        return fail("load", e.what(), 1);
    } catch (const StructuralError& e) {
        return fail("structural", e.what(), 1);
    } catch (const NumericError& e) {
        return fail("numeric", e.what(), 1);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
}

int run_command(int argc, char** argv)
{
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run_command(args, std::cout, std::cerr);
}

} // namespace gatenas
