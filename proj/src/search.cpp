#include "gatenas/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "gatenas/errors.hpp"
#include "gatenas/executor.hpp"

namespace gatenas {

AdamConfig adam_config(const SearchConfig& cfg)
{
    return AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.weight_decay};
}

CostOptions cost_options(const SearchConfig& cfg)
{
    return CostOptions{cfg.metric, cfg.count_aux_params};
}

nlohmann::json epoch_to_json(const EpochRecord& rec)
{
    return {
        {"epoch", rec.epoch},
        {"task_loss", rec.task_loss},
        {"expected_cost", rec.expected_cost},
        {"total_cost", rec.total_cost},
        {"pi_mean", rec.pi_mean},
        {"pi_saturated", rec.pi_saturated},
        {"eval_accuracy", rec.eval_accuracy},
        {"learning_rate", rec.learning_rate},
    };
}

namespace {

std::string format_double(double v)
{
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

std::vector<std::vector<int>> epoch_batches(int n, int batch, Rng& rng)
{
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<int>(order));
    std::vector<std::vector<int>> out;
    const int size = std::max(1, batch);
    for (int start = 0; start < n; start += size) {
        const int end = std::min(n, start + size);
        // A one-sample tail gives degenerate batch statistics.
        if (end - start < 2 && !out.empty()) {
            break;
        }
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

std::vector<ParamSlot> weight_slots(NetworkGraph& graph, const Gradients& grads)
{
    std::vector<ParamSlot> slots;
    for (std::size_t id = 0; id < graph.size(); ++id) {
        Node& node = graph.node(static_cast<NodeId>(id));
        for (std::size_t k = 0; k < node.params.size(); ++k) {
            Param& p = node.params[k];
            slots.push_back(ParamSlot{node.name + "." + p.name, p.value, grads.params[id][k], p.decay});
        }
    }
    return slots;
}

void fill_pi_stats(EpochRecord& rec, std::span<const double> pi)
{
    if (pi.empty()) {
        rec.pi_mean = 1.0;
        return;
    }
    double sum = 0.0;
    int saturated = 0;
    for (double p : pi) {
        sum += p;
        saturated += (p < 0.01 || p > 0.99) ? 1 : 0;
    }
    rec.pi_mean = sum / static_cast<double>(pi.size());
    rec.pi_saturated = static_cast<double>(saturated) / static_cast<double>(pi.size());
}

} // namespace

double evaluate_accuracy(const NetworkGraph& graph, const Dataset& data, std::span<const double> masks)
{
    const int n = data.eval_x.dim(0);
    if (n == 0) {
        return 0.0;
    }
    Executor exec(graph);
    std::size_t hits = 0;
    const int chunk = 256;
    for (int start = 0; start < n; start += chunk) {
        std::vector<int> idx(static_cast<std::size_t>(std::min(chunk, n - start)));
        std::iota(idx.begin(), idx.end(), start);
        exec.forward(gather_rows(data.eval_x, idx), {}, Mode::kEval, masks);
        const auto pred = exec.predictions();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            hits += pred[i] == data.eval_y[static_cast<std::size_t>(idx[i])] ? 1 : 0;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

LearnedState architecture_learn(const PreparedSpace& ps, const CostModel& cost, const Dataset& data,
                                const SearchConfig& cfg, const EpochCallback& on_epoch)
{
    if (cfg.lambda < 0.0) {
        throw ConfigError("lambda must be non-negative");
    }
    LearnedState state;
    state.graph = ps.graph;
    Rng init = make_rng(cfg.seed, Stream::kInit);
    state.graph.initialize_parameters(init);
    state.gates = GateSet(ps.groups.size(), cfg.logit_init, cfg.tau);
    state.optimizer.config = adam_config(cfg);

    Rng noise_rng = make_rng(cfg.seed, Stream::kNoise);
    Rng shuffle_rng = make_rng(cfg.seed, Stream::kShuffle);
    ArchitectureObjective objective(state.graph, cost, state.gates, cfg.lambda, cfg.penalty);
    const int n = data.train_x.dim(0);

    for (int epoch = 0; epoch < cfg.search_epochs; ++epoch) {
        const double lr = scheduled_learning_rate(cfg.learning_rate, cfg.lr_decay, cfg.lr_decay_epochs, epoch);
        double loss_sum = 0.0;
        int batches = 0;
        for (const auto& idx : epoch_batches(n, cfg.batch_size, shuffle_rng)) {
            std::vector<int> labels;
            labels.reserve(idx.size());
            for (int i : idx) {
                labels.push_back(data.train_y[static_cast<std::size_t>(i)]);
            }
            const auto noise = state.gates.sample_noise(noise_rng);
            auto r = objective.evaluate(gather_rows(data.train_x, idx), labels, noise, true);
            if (!std::isfinite(r.task_loss) || !std::isfinite(r.cost)) {
                throw NumericError(std::string("non-finite ") + (std::isfinite(r.task_loss) ? "cost" : "task loss") +
                                   " term at epoch " + std::to_string(epoch) + " (lambda=" +
                                   format_double(cfg.lambda) + ", learning rate " + format_double(lr) + ")");
            }
            auto slots = weight_slots(state.graph, r.grads);
            slots.push_back(ParamSlot{"gates.logits", state.gates.logits, r.logit_grad, false});
            adam_step(slots, state.optimizer, lr);
            objective.executor().update_running_stats(state.graph, cfg.bn_momentum);
            loss_sum += r.task_loss;
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = lr;
        rec.task_loss = batches > 0 ? loss_sum / batches : 0.0;
        const auto pi = state.gates.probabilities();
        rec.expected_cost = expected_cost(cost, pi);
        rec.total_cost = rec.expected_cost + cost.fixed;
        fill_pi_stats(rec, pi);
        const auto hard = state.gates.most_likely();
        rec.eval_accuracy = evaluate_accuracy(state.graph, data, hard);
        state.history.epochs.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
    }
    return state;
}

double initial_penalty_ratio(const PreparedSpace& ps, const CostModel& cost, const Dataset& data,
                             const SearchConfig& cfg)
{
    NetworkGraph graph = ps.graph;
    Rng init = make_rng(cfg.seed, Stream::kInit);
    graph.initialize_parameters(init);
    GateSet gates(ps.groups.size(), cfg.logit_init, cfg.tau);
    Rng noise_rng = make_rng(cfg.seed, Stream::kNoise);
    ArchitectureObjective objective(graph, cost, gates, cfg.lambda, cfg.penalty);
    const int n = std::min(data.train_x.dim(0), std::max(2, cfg.batch_size));
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<int> labels(data.train_y.begin(), data.train_y.begin() + n);
    const auto r = objective.evaluate(gather_rows(data.train_x, idx), labels, gates.sample_noise(noise_rng), false);
    return cfg.lambda * r.cost / r.task_loss;
}

ExportResult export_architecture(const PreparedSpace& ps, std::span<const double> pi)
{
    if (pi.size() != ps.groups.size()) {
        throw StructuralError("export got " + std::to_string(pi.size()) + " probabilities for " +
                              std::to_string(ps.groups.size()) + " groups");
    }
    ExportResult result;
    const std::size_t n = ps.layers.size();
    std::vector<int> width(n);
    std::vector<double> mass(n);
    for (std::size_t l = 0; l < n; ++l) {
        const auto& layer = ps.layers[l];
        double sum = 0.0;
        for (int g : layer.groups) {
            sum += g >= 0 ? pi[static_cast<std::size_t>(g)] : 1.0;
        }
        mass[l] = sum;
        width[l] = std::min(layer.full_width, static_cast<int>(std::floor(sum + 1e-9)));
    }

    // Layers tied by an add share their groups channel for channel and must
    // end up equally wide.
    auto propagate = [&]() {
        std::map<std::vector<int>, int> widest;
        for (std::size_t l = 0; l < n; ++l) {
            auto [it, fresh] = widest.emplace(ps.layers[l].groups, width[l]);
            if (!fresh) {
                it->second = std::max(it->second, width[l]);
            }
        }
        for (std::size_t l = 0; l < n; ++l) {
            width[l] = widest.at(ps.layers[l].groups);
        }
    };

    for (std::size_t l = 0; l < n; ++l) {
        if (ps.layers[l].mandatory && width[l] == 0) {
            width[l] = 1;
            result.warnings.push_back("layer '" + ps.layers[l].name + "' has expected width " +
                                      format_double(mass[l]) + " < 1; clamped to 1");
        }
    }
    propagate();

    std::map<std::string, std::vector<std::size_t>> op_layers;
    for (std::size_t l = 0; l < n; ++l) {
        if (!ps.layers[l].op.empty()) {
            op_layers[ps.layers[l].op].push_back(l);
        }
    }
    auto present = [&](const std::string& op) {
        auto it = op_layers.find(op);
        if (it == op_layers.end()) {
            return true;
        }
        return std::all_of(it->second.begin(), it->second.end(), [&](std::size_t l) { return width[l] > 0; });
    };

    for (const auto& block : ps.space.blocks) {
        if (block.has_bypass || std::any_of(block.operators.begin(), block.operators.end(), present)) {
            continue;
        }
        std::string best;
        double best_mass = -1.0;
        for (const auto& op : block.operators) {
            double m = 0.0;
            for (std::size_t l : op_layers[op]) {
                m += mass[l];
            }
            if (m > best_mass) {
                best_mass = m;
                best = op;
            }
        }
        for (std::size_t l : op_layers[best]) {
            width[l] = std::max(width[l], 1);
        }
        result.warnings.push_back("block '" + block.id + "' lost every operator; kept '" + best + "'");
        propagate();
    }

    for (std::size_t l = 0; l < n; ++l) {
        result.arch.widths[ps.layers[l].name] = width[l];
    }
    for (const auto& op : ps.space.operators) {
        result.arch.operators[op.id] = present(op.id);
    }
    return result;
}

std::vector<double> sample_hard_masks(std::span<const double> pi, Rng& rng)
{
    std::vector<double> m(pi.size());
    for (std::size_t i = 0; i < pi.size(); ++i) {
        m[i] = rng.uniform() < pi[i] ? 1.0 : 0.0;
    }
    return m;
}

TrainResult retrain(const NetworkGraph& graph, const Dataset& data, const SearchConfig& cfg,
                    const EpochCallback& on_epoch)
{
    if (graph.has_masks()) {
        throw StructuralError("retraining expects a materialized graph without mask nodes");
    }
    NetworkGraph g = graph;
    Rng init = make_rng(cfg.seed, Stream::kInit);
    g.initialize_parameters(init);
    OptimizerState opt;
    opt.config = adam_config(cfg);
    Rng shuffle_rng = make_rng(cfg.seed, Stream::kShuffle);
    Executor exec(g);
    const int n = data.train_x.dim(0);

    TrainResult result;
    if (cfg.retrain_epochs <= 0) {
        result.best_accuracy = result.final_accuracy = evaluate_accuracy(g, data);
        result.model = std::move(g);
        return result;
    }
    for (int epoch = 0; epoch < cfg.retrain_epochs; ++epoch) {
        const double lr = scheduled_learning_rate(cfg.learning_rate, cfg.lr_decay, cfg.lr_decay_epochs, epoch);
        double loss_sum = 0.0;
        int batches = 0;
        for (const auto& idx : epoch_batches(n, cfg.batch_size, shuffle_rng)) {
            std::vector<int> labels;
            labels.reserve(idx.size());
            for (int i : idx) {
                labels.push_back(data.train_y[static_cast<std::size_t>(i)]);
            }
            const double loss = exec.forward(gather_rows(data.train_x, idx), labels, Mode::kTrain);
            if (!std::isfinite(loss)) {
                throw NumericError("retraining diverged at epoch " + std::to_string(epoch) + " (learning rate " +
                                   format_double(lr) + ")");
            }
            const Gradients grads = exec.backward();
            adam_step(weight_slots(g, grads), opt, lr);
            exec.update_running_stats(g, cfg.bn_momentum);
            loss_sum += loss;
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = lr;
        rec.task_loss = batches > 0 ? loss_sum / batches : 0.0;
        rec.pi_mean = 1.0;
        rec.eval_accuracy = evaluate_accuracy(g, data);
        result.best_accuracy = std::max(result.best_accuracy, rec.eval_accuracy);
        result.final_accuracy = rec.eval_accuracy;
        result.final_loss = rec.task_loss;
        result.history.epochs.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }
    }
    result.model = std::move(g);
    return result;
}

SearchOutcome run_search(const PreparedSpace& ps, const Dataset& data, const SearchConfig& cfg,
                         const EpochCallback& on_epoch)
{
    SearchOutcome out;
    const CostModel cost = cost_terms(ps.graph, ps.groups, cost_options(cfg));
    out.learned = architecture_learn(ps, cost, data, cfg, on_epoch);
    std::vector<double> pi = out.learned.gates.probabilities();
    if (cfg.export_mode == ExportMode::kHardSample) {
        Rng rng = make_rng(cfg.seed, Stream::kArchitecture);
        pi = sample_hard_masks(pi, rng);
    }
    out.exported = export_architecture(ps, pi);
    Materialized m = materialize(ps, out.exported.arch, pi, cfg.seed);
    out.exported.arch = m.arch;
    out.materialized = std::move(m.graph);
    out.cost = graph_cost(out.materialized, cost_options(cfg));
    out.retrained = retrain(out.materialized, data, cfg);
    return out;
}

std::vector<ArchitecturePoint> random_search(const PreparedSpace& ps, int samples, const Dataset& data,
                                             const SearchConfig& cfg)
{
    if (samples < 1) {
        throw ConfigError("random search needs at least one sample");
    }
    Rng rng = make_rng(cfg.seed, Stream::kArchitecture);
    std::vector<ArchitecturePoint> points;
    for (int i = 0; i < samples; ++i) {
        const Architecture arch = sample_random_architecture(ps, rng);
        Materialized m = materialize(ps, arch, {}, cfg.seed);
        const TrainResult r = retrain(m.graph, data, cfg);
        points.push_back(ArchitecturePoint{"random", m.arch, graph_cost(m.graph, cost_options(cfg)), r.final_accuracy,
                                           cfg.seed, 0.0});
    }
    return points;
}

ArchitecturePoint width_multiplier_baseline(const PreparedSpace& ps, double alpha, const Dataset& data,
                                            const SearchConfig& cfg)
{
    Materialized m = materialize(ps, apply_width_multiplier(ps, alpha), {}, cfg.seed);
    const TrainResult r = retrain(m.graph, data, cfg);
    return ArchitecturePoint{"width", m.arch, graph_cost(m.graph, cost_options(cfg)), r.final_accuracy, cfg.seed,
                             alpha};
}

L1Result l1_baseline(const PreparedSpace& ps, const CostModel& cost, const Dataset& data, const SearchConfig& cfg)
{
    NetworkGraph graph = ps.graph;
    Rng init = make_rng(cfg.seed, Stream::kInit);
    graph.initialize_parameters(init);
    L1Result result;
    result.gates.assign(ps.groups.size(), 1.0);
    const std::vector<double> ones(ps.groups.size(), 1.0);
    const std::vector<double> weight = expected_cost_gradient(cost, ones);

    OptimizerState opt;
    opt.config = adam_config(cfg);
    Rng shuffle_rng = make_rng(cfg.seed, Stream::kShuffle);
    Executor exec(graph);
    const int n = data.train_x.dim(0);
    std::vector<double> gate_grad(result.gates.size());

    for (int epoch = 0; epoch < cfg.search_epochs; ++epoch) {
        const double lr = scheduled_learning_rate(cfg.learning_rate, cfg.lr_decay, cfg.lr_decay_epochs, epoch);
        double loss_sum = 0.0;
        int batches = 0;
        for (const auto& idx : epoch_batches(n, cfg.batch_size, shuffle_rng)) {
            std::vector<int> labels;
            for (int i : idx) {
                labels.push_back(data.train_y[static_cast<std::size_t>(i)]);
            }
            const double loss = exec.forward(gather_rows(data.train_x, idx), labels, Mode::kTrain, result.gates);
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite task loss at epoch " + std::to_string(epoch) + " (lambda=" +
                                   format_double(cfg.lambda) + ")");
            }
            const Gradients grads = exec.backward();
            std::copy(grads.masks.begin(), grads.masks.end(), gate_grad.begin());
            auto slots = weight_slots(graph, grads);
            slots.push_back(ParamSlot{"gates.l1", result.gates, gate_grad, false});
            adam_step(slots, opt, lr);
            // Proximal step for the L1 term: soft-threshold by lr * lambda * w_i.
            for (std::size_t i = 0; i < result.gates.size(); ++i) {
                const double g = result.gates[i];
                const double shrunk = std::max(0.0, std::abs(g) - lr * cfg.lambda * weight[i]);
                result.gates[i] = g < 0.0 ? -shrunk : shrunk;
            }
            exec.update_running_stats(graph, cfg.bn_momentum);
            loss_sum += loss;
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = lr;
        rec.task_loss = batches > 0 ? loss_sum / batches : 0.0;
        std::vector<double> alive(result.gates.size());
        for (std::size_t i = 0; i < alive.size(); ++i) {
            alive[i] = std::abs(result.gates[i]) > 1e-2 ? 1.0 : 0.0;
        }
        rec.expected_cost = expected_cost(cost, alive);
        rec.total_cost = rec.expected_cost + cost.fixed;
        fill_pi_stats(rec, alive);
        rec.eval_accuracy = evaluate_accuracy(graph, data, result.gates);
        result.history.epochs.push_back(rec);
    }
    std::vector<double> alive(result.gates.size());
    for (std::size_t i = 0; i < alive.size(); ++i) {
        alive[i] = std::abs(result.gates[i]) > 1e-2 ? 1.0 : 0.0;
    }
    result.exported = export_architecture(ps, alive);
    return result;
}

std::vector<ArchitecturePoint> pareto_sweep(const PreparedSpace& ps, const Dataset& data, const SearchConfig& cfg,
                                            std::span<const SweepJob> sweep, int jobs, const SweepCallback& on_done)
{
    if (sweep.empty()) {
        throw ConfigError("sweep needs at least one lambda");
    }
    std::vector<ArchitecturePoint> points(sweep.size());
    std::vector<std::exception_ptr> errors(sweep.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < sweep.size(); i = next++) {
            try {
                SearchConfig c = cfg;
                c.lambda = sweep[i].lambda;
                c.seed = sweep[i].seed;
                if (sweep[i].search_epochs > 0) {
                    c.search_epochs = sweep[i].search_epochs;
                }
                const SearchOutcome out = run_search(ps, data, c);
                points[i] = ArchitecturePoint{"search", out.exported.arch, out.cost, out.retrained.final_accuracy,
                                              c.seed, c.lambda};
                if (on_done) {
                    on_done(i, out);
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(sweep.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
    return points;
}

} // namespace gatenas
