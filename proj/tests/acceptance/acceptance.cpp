// Acceptance suite: one PASS/FAIL line per criterion.
//   gatenas_acceptance               all criteria
//   gatenas_acceptance --criterion N one criterion

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <json.hpp>

#include "gatenas/cli.hpp"
#include "gatenas/config.hpp"
#include "gatenas/cost.hpp"
#include "gatenas/search.hpp"
#include "gatenas/spaces.hpp"
#include "gatenas/verify.hpp"

namespace fs = std::filesystem;
using namespace gatenas;

namespace {

// Pinned tolerances.
constexpr double kGradTolerance = 1e-3;
constexpr double kGradStep = 1e-4;
constexpr double kGradTau = 0.5;
constexpr int kGradCoordinates = 200;
constexpr double kCostTolerance = 1e-9;
constexpr int kCostGraphs = 50;
constexpr int kCostMaxGroups = 12;
constexpr int kSamplerDraws = 100000;
// Asymptotic Kolmogorov critical value at significance 0.01.
constexpr double kKsCritical = 1.628;
constexpr int kGroupingSpaces = 20;
constexpr double kAggregatorTolerance = 1e-5;
constexpr double kTradeoffAccuracy = 0.015;
constexpr double kTradeoffSizeRatio = 1.25;
constexpr double kReproDigits = 5e-7;

const fs::path kSource = GATENAS_SOURCE_DIR;

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string num(double v, int precision = 4)
{
    std::ostringstream s;
    s.precision(precision);
    s << v;
    return s.str();
}

int worker_count()
{
    return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

struct Task {
    RunConfig cfg;
    Dataset data;
    PreparedSpace ps;
};

Task load_task(const std::string& config)
{
    Task t{load_config(kSource / "configs" / config), {}, {}};
    t.data = load_dataset(t.cfg.data);
    t.cfg.space = space_for_data(t.cfg.space, t.data);
    t.ps = prepare_space(t.cfg.space);
    return t;
}

double mean(const std::vector<double>& v)
{
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void save(const std::string& name, const nlohmann::json& doc)
{
    std::ofstream(name) << doc.dump(2) << '\n';
}

Outcome criterion_gradients()
{
    const auto r = check_objective_gradients(0, 255, kGradStep, kGradTau, 0.01);
    const bool ok = r.checked >= kGradCoordinates && r.nan_count == 0 && r.max_rel_error <= kGradTolerance;
    return {ok, std::to_string(r.checked) + " coordinates checked (" + std::to_string(r.kinks) +
                    " straddling a ReLU kink skipped), max relative error " + num(r.max_rel_error) + " at " +
                    r.worst + ", tolerance " + num(kGradTolerance)};
}

Outcome criterion_cost()
{
    const auto r = check_cost_bruteforce(0, kCostGraphs, kCostMaxGroups);
    const bool ok = r.instances >= kCostGraphs && r.max_groups <= kCostMaxGroups && r.max_abs_error <= kCostTolerance;
    return {ok, std::to_string(r.instances) + " graphs (up to " + std::to_string(r.max_groups) +
                    " groups), params and flops, max abs error " + num(r.max_abs_error) + ", tolerance " +
                    num(kCostTolerance)};
}

Outcome criterion_sampler()
{
    bool ok = true;
    std::string detail;
    std::uint64_t seed = 100;
    for (double nu : {-2.5, 0.0, 2.5}) {
        for (double tau : {1.0, 0.001}) {
            const auto c = check_threshold_law(nu, tau, kSamplerDraws, seed++);
            ok = ok && c.passed();
            detail += "(nu " + num(nu) + ", tau " + num(tau) + ") |" + num(c.rate, 5) + " - " + num(c.expected, 5) +
                      "| <= " + num(c.tolerance, 3) + (c.passed() ? "" : " FAILED") + "; ";
        }
    }
    const double d = logistic_ks_statistic(kSamplerDraws, 7);
    const double critical = kKsCritical / std::sqrt(static_cast<double>(kSamplerDraws));
    ok = ok && d < critical;
    detail += "KS D " + num(d) + " < " + num(critical);
    return {ok, detail};
}

Outcome criterion_grouping()
{
    const auto r = check_grouping(0, kGroupingSpaces);
    std::string detail = std::to_string(r.groups) + " groups in " + std::to_string(r.spaces) + " random spaces, " +
                         std::to_string(r.failures) + " not exactly equivalent";
    for (std::size_t i = 0; i < std::min<std::size_t>(3, r.failed.size()); ++i) {
        detail += "; " + r.failed[i];
    }
    return {r.failures == 0 && r.spaces == kGroupingSpaces, detail};
}

Outcome criterion_aggregator()
{
    double worst = 0.0;
    for (int n : {2, 3, 4}) {
        for (int w : {1, 3, 8}) {
            worst = std::max(worst, check_aggregator_equivalence(n, w, static_cast<std::uint64_t>(10 * n + w)));
        }
    }
    return {worst <= kAggregatorTolerance,
            "9 (operators, width) settings, max abs deviation " + num(worst) + ", tolerance " +
                num(kAggregatorTolerance)};
}

std::vector<ArchitecturePoint> sweep_points(const Task& t, const std::vector<double>& lambdas, int seeds, int epochs)
{
    std::vector<SweepJob> jobs;
    for (double l : lambdas) {
        for (int s = 0; s < seeds; ++s) {
            jobs.push_back(SweepJob{l, static_cast<std::uint64_t>(s), epochs});
        }
    }
    return pareto_sweep(t.ps, t.data, t.cfg.search, jobs, worker_count());
}

Outcome criterion_monotonic()
{
    const Task t = load_task("features.cfg");
    const auto& lambdas = t.cfg.sweep.lambdas;
    if (lambdas.size() != 4) {
        return {false, "features.cfg must list 4 lambdas"};
    }
    const int seeds = 3;
    const auto points = sweep_points(t, lambdas, seeds, 0);
    std::vector<double> means;
    std::string detail = "mean exported params:";
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        std::vector<double> c;
        for (int s = 0; s < seeds; ++s) {
            c.push_back(points[i * seeds + static_cast<std::size_t>(s)].cost);
        }
        means.push_back(mean(c));
        detail += " lambda " + num(lambdas[i]) + " -> " + num(means.back(), 6) + ";";
    }
    bool ok = true;
    for (std::size_t i = 1; i < means.size(); ++i) {
        ok = ok && means[i] <= means[i - 1];
    }
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& p : points) {
        doc.push_back({{"lambda", p.lambda}, {"seed", p.seed}, {"cost", p.cost}, {"accuracy", p.accuracy}});
    }
    save("acceptance_criterion_6.json", doc);
    return {ok, detail};
}

// Largest width multiplier whose exact cost fits the budget, or 0.
double fitting_alpha(const PreparedSpace& ps, double budget, const CostOptions& options)
{
    auto cost = [&](double a) { return architecture_cost(ps, apply_width_multiplier(ps, a), options); };
    if (cost(1.0) <= budget) {
        return 1.0;
    }
    double lo = 1e-6;
    if (cost(lo) > budget) {
        return 0.0;
    }
    double hi = 1.0;
    for (int i = 0; i < 40; ++i) {
        const double mid = 0.5 * (lo + hi);
        (cost(mid) <= budget ? lo : hi) = mid;
    }
    return lo;
}

Outcome criterion_baselines()
{
    const Task t = load_task("digits.cfg");
    const SearchConfig& base = t.cfg.search;
    const std::vector<double> lambdas{3e-4, 1e-3, 3e-3};
    const int seeds = 3;
    const auto searched = sweep_points(t, lambdas, seeds, 0);

    SearchConfig rs = base;
    rs.seed = 0;
    const auto random = random_search(t.ps, 30, t.data, rs);

    nlohmann::json doc;
    int wins = 0;
    std::string detail;
    for (std::size_t b = 0; b < lambdas.size(); ++b) {
        std::vector<double> acc;
        double budget = 0.0;
        for (int s = 0; s < seeds; ++s) {
            const auto& p = searched[b * seeds + static_cast<std::size_t>(s)];
            acc.push_back(p.accuracy);
            budget = std::max(budget, p.cost);
        }
        const double search_acc = mean(acc);

        const double alpha = fitting_alpha(t.ps, budget, cost_options(base));
        double width_acc = 0.0;
        double width_cost = 0.0;
        if (alpha > 0.0) {
            std::vector<double> wa;
            for (int s = 0; s < seeds; ++s) {
                SearchConfig c = base;
                c.seed = static_cast<std::uint64_t>(s);
                const auto p = width_multiplier_baseline(t.ps, alpha, t.data, c);
                wa.push_back(p.accuracy);
                width_cost = p.cost;
            }
            width_acc = mean(wa);
        }
        double random_best = 0.0;
        int random_fit = 0;
        for (const auto& p : random) {
            if (p.cost <= budget) {
                ++random_fit;
                random_best = std::max(random_best, p.accuracy);
            }
        }
        const bool win = search_acc >= width_acc && search_acc >= random_best;
        wins += win ? 1 : 0;
        detail += "budget " + num(budget, 6) + ": search " + num(search_acc) + " vs width(alpha " + num(alpha, 3) +
                  ", cost " + num(width_cost, 6) + ") " + num(width_acc) + " vs random best of " +
                  std::to_string(random_fit) + " " + num(random_best) + (win ? " win" : " loss") + "; ";
        doc["budgets"].push_back({{"lambda", lambdas[b]},
                                  {"budget", budget},
                                  {"search_accuracy", acc},
                                  {"alpha", alpha},
                                  {"width_cost", width_cost},
                                  {"width_accuracy", width_acc},
                                  {"random_fitting", random_fit},
                                  {"random_best", random_best},
                                  {"win", win}});
    }
    for (const auto& p : searched) {
        doc["search"].push_back({{"lambda", p.lambda}, {"seed", p.seed}, {"cost", p.cost}, {"accuracy", p.accuracy}});
    }
    for (const auto& p : random) {
        doc["random"].push_back({{"cost", p.cost}, {"accuracy", p.accuracy}});
    }
    save("acceptance_criterion_7.json", doc);
    return {wins >= 2, std::to_string(wins) + "/3 budgets won; " + detail};
}

Outcome criterion_tradeoff()
{
    const Task t = load_task("digits.cfg");
    const double lambda = 1e-3;
    const int long_epochs = 10;
    const int short_epochs = 4;
    const int seeds = 3;
    const std::vector<double> multipliers{2.0, 2.5, 3.0};

    std::vector<double> lambdas{lambda};
    const auto long_points = sweep_points(t, lambdas, seeds, long_epochs);
    std::vector<double> short_lambdas;
    for (double m : multipliers) {
        short_lambdas.push_back(lambda * m);
    }
    const auto short_points = sweep_points(t, short_lambdas, seeds, short_epochs);

    auto summarize = [&](const std::vector<ArchitecturePoint>& pts, std::size_t group) {
        std::vector<double> acc;
        std::vector<double> cost;
        for (int s = 0; s < seeds; ++s) {
            acc.push_back(pts[group * seeds + static_cast<std::size_t>(s)].accuracy);
            cost.push_back(pts[group * seeds + static_cast<std::size_t>(s)].cost);
        }
        return std::pair{mean(acc), mean(cost)};
    };
    const auto [long_acc, long_cost] = summarize(long_points, 0);
    // The multiplier is picked by size alone: closest mean exported cost.
    std::size_t pick = 0;
    double best_gap = 1e300;
    nlohmann::json doc;
    doc["long"] = {{"lambda", lambda}, {"epochs", long_epochs}, {"accuracy", long_acc}, {"cost", long_cost}};
    for (std::size_t m = 0; m < multipliers.size(); ++m) {
        const auto [acc, cost] = summarize(short_points, m);
        const double gap = std::abs(std::log(cost / long_cost));
        doc["short"].push_back({{"multiplier", multipliers[m]}, {"epochs", short_epochs}, {"accuracy", acc},
                                {"cost", cost}});
        if (gap < best_gap) {
            best_gap = gap;
            pick = m;
        }
    }
    const auto [short_acc, short_cost] = summarize(short_points, pick);
    const double ratio = short_cost / long_cost;
    const bool size_ok = ratio <= kTradeoffSizeRatio && ratio >= 1.0 / kTradeoffSizeRatio;
    const bool acc_ok = short_acc >= long_acc - kTradeoffAccuracy;
    doc["picked"] = multipliers[pick];
    save("acceptance_criterion_8.json", doc);
    return {size_ok && acc_ok,
            "long AL (" + std::to_string(long_epochs) + " epochs, lambda " + num(lambda) + "): accuracy " +
                num(long_acc) + ", cost " + num(long_cost, 6) + "; short AL (" + std::to_string(short_epochs) +
                " epochs, lambda x" + num(multipliers[pick]) + "): accuracy " + num(short_acc) + ", cost " +
                num(short_cost, 6) + "; size ratio " + num(ratio) + " (limit " + num(kTradeoffSizeRatio) +
                "), accuracy gap " + num(long_acc - short_acc) + " (limit " + num(kTradeoffAccuracy) + ")"};
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome criterion_reproducible()
{
    const fs::path root = fs::temp_directory_path() / ("gatenas_acceptance_repro_" + std::to_string(::getpid()));
    fs::remove_all(root);
    std::ostringstream sink;
    bool ok = true;
    std::string detail;
    struct Run {
        std::string config;
        std::vector<std::string> extra;
    };
    const std::vector<Run> runs{
        {"features.cfg", {}},
        {"digits.cfg", {"--search-epochs", "2", "--retrain-epochs", "2"}},
    };
    for (const auto& run : runs) {
        std::vector<std::string> arch;
        std::vector<double> loss;
        for (int rep = 0; rep < 2; ++rep) {
            const fs::path dir = root / (run.config + std::to_string(rep));
            std::vector<std::string> args{"search", "-c", (kSource / "configs" / run.config).string(), "-o",
                                          dir.string()};
            args.insert(args.end(), run.extra.begin(), run.extra.end());
            if (run_command(args, sink, sink) != 0) {
                return {false, run.config + ": search failed: " + sink.str()};
            }
            arch.push_back(slurp(dir / "arch.json"));
            loss.push_back(nlohmann::json::parse(slurp(dir / "result.json")).at("final_loss").get<double>());
        }
        const double rel = std::abs(loss[0] - loss[1]) / std::max(std::abs(loss[0]), 1e-300);
        const bool same = arch[0] == arch[1] && rel <= kReproDigits;
        ok = ok && same;
        detail += run.config + ": arch.json " + (arch[0] == arch[1] ? "identical" : "DIFFERS") + ", final loss " +
                  num(loss[0], 10) + " vs " + num(loss[1], 10) + "; ";
    }
    // Thread count must not change sweep results.
    std::vector<std::string> summaries;
    for (const char* jobs : {"1", "2"}) {
        const fs::path dir = root / (std::string("sweep") + jobs);
        const std::vector<std::string> args{"sweep", "-c", (kSource / "configs" / "features.cfg").string(), "-o",
                                            dir.string(), "--lambdas", "1e-3,3e-3", "--seeds", "2", "--jobs", jobs};
        if (run_command(args, sink, sink) != 0) {
            return {false, "sweep failed: " + sink.str()};
        }
        summaries.push_back(slurp(dir / "sweep" / "summary.csv"));
    }
    ok = ok && summaries[0] == summaries[1];
    detail += std::string("sweep summary with 1 vs 2 jobs ") + (summaries[0] == summaries[1] ? "identical" : "DIFFERS");
    fs::remove_all(root);
    return {ok, detail};
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria()
{
    static const std::vector<Criterion> list{
        {1, "gradient correctness", 60, criterion_gradients},
        {2, "cost-model exactness", 60, criterion_cost},
        {3, "sampler law", 30, criterion_sampler},
        {4, "grouping soundness", 120, criterion_grouping},
        {5, "aggregator generalization", 10, criterion_aggregator},
        {6, "lambda monotonicity", 1200, criterion_monotonic},
        {7, "search quality vs baselines", 10800, criterion_baselines},
        {8, "budget tradeoff", 3600, criterion_tradeoff},
        {9, "reproducibility", 600, criterion_reproducible},
    };
    return list;
}

} // namespace

int main(int argc, char** argv)
{
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::cerr << "usage: gatenas_acceptance [--criterion N]\n";
            return 2;
        }
    }
    if (only != 0 && (only < 1 || only > 9)) {
        std::cerr << "criterion must be 1..9\n";
        return 2;
    }
    bool all = true;
    for (const auto& c : criteria()) {
        if (only != 0 && c.id != only) {
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs <= c.limit_seconds;
        const bool passed = o.passed && in_time;
        all = all && passed;
        std::cout << "criterion " << c.id << " " << (passed ? "PASS" : "FAIL") << " " << c.name << " ["
                  << num(secs, 3) << " s of " << num(c.limit_seconds, 6) << " s" << (in_time ? "" : ", over time")
                  << "]: " << o.detail << std::endl;
    }
    return all ? 0 : 1;
}
