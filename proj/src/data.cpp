#include "gatenas/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gatenas/errors.hpp"
#include "gatenas/random.hpp"

namespace gatenas {

namespace {

std::vector<unsigned char> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw LoadError("cannot open '" + path + "'");
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t big_endian(const std::vector<unsigned char>& bytes, std::size_t at)
{
    return (std::uint32_t{bytes[at]} << 24) | (std::uint32_t{bytes[at + 1]} << 16) |
           (std::uint32_t{bytes[at + 2]} << 8) | std::uint32_t{bytes[at + 3]};
}

std::vector<std::uint32_t> idx_header(const std::vector<unsigned char>& bytes, std::uint32_t magic,
                                      const std::string& path)
{
    if (bytes.size() < 4 || big_endian(bytes, 0) != magic) {
        std::ostringstream msg;
        msg << "'" << path << "': bad IDX magic, expected 0x" << std::hex << magic;
        throw LoadError(msg.str());
    }
    const std::size_t dims = magic & 0xFFU;
    if (bytes.size() < 4 + 4 * dims) {
        throw LoadError("'" + path + "': truncated IDX header");
    }
    std::vector<std::uint32_t> out;
    std::size_t total = 1;
    for (std::size_t d = 0; d < dims; ++d) {
        out.push_back(big_endian(bytes, 4 + 4 * d));
        total *= out.back();
    }
    if (bytes.size() != 4 + 4 * dims + total) {
        throw LoadError("'" + path + "': expected " + std::to_string(total) + " data bytes, found " +
                        std::to_string(bytes.size() - 4 - 4 * dims));
    }
    return out;
}

} // namespace

RawData load_idx(const std::string& images_path, const std::string& labels_path)
{
    const auto images = read_file(images_path);
    const auto labels = read_file(labels_path);
    const auto idims = idx_header(images, 0x00000803U, images_path);
    const auto ldims = idx_header(labels, 0x00000801U, labels_path);
    if (idims[0] != ldims[0]) {
        throw LoadError("image file has " + std::to_string(idims[0]) + " items, label file " + std::to_string(ldims[0]));
    }
    const int n = static_cast<int>(idims[0]);
    const int h = static_cast<int>(idims[1]);
    const int w = static_cast<int>(idims[2]);
    RawData raw;
    raw.x = Tensor({n, 1, h, w});
    const std::size_t offset = 16;
    for (std::size_t i = 0; i < raw.x.size(); ++i) {
        raw.x.data[i] = static_cast<double>(images[offset + i]) / 255.0;
    }
    raw.y.resize(static_cast<std::size_t>(n));
    int max_label = 0;
    for (int i = 0; i < n; ++i) {
        raw.y[static_cast<std::size_t>(i)] = labels[8 + static_cast<std::size_t>(i)];
        max_label = std::max(max_label, raw.y[static_cast<std::size_t>(i)]);
    }
    raw.classes = max_label + 1;
    return raw;
}

RawData load_csv(const std::string& path)
{
    std::ifstream in(path);
    if (!in) {
        throw LoadError("cannot open '" + path + "'");
    }
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) {
                cell.pop_back();
            }
            cells.push_back(cell);
        }
        if (!line.empty() && line.back() == ',') {
            cells.emplace_back();
        }
        return cells;
    };
    std::string line;
    if (!std::getline(in, line)) {
        throw LoadError("'" + path + "' is empty");
    }
    const auto header = split(line);
    if (header.empty() || header[0] != "label") {
        throw LoadError("'" + path + "': header must start with 'label'");
    }
    for (std::size_t k = 1; k < header.size(); ++k) {
        if (header[k] != "f" + std::to_string(k - 1)) {
            throw LoadError("'" + path + "': header column " + std::to_string(k + 1) + " is '" + header[k] +
                            "', expected 'f" + std::to_string(k - 1) + "'");
        }
    }
    const std::size_t features = header.size() - 1;
    if (features == 0) {
        throw LoadError("'" + path + "' has no feature columns");
    }
    std::vector<double> values;
    std::vector<int> labels;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") {
            continue;
        }
        const auto cells = split(line);
        if (cells.size() != header.size()) {
            throw LoadError("'" + path + "' row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                            " columns, expected " + std::to_string(header.size()));
        }
        for (std::size_t k = 0; k < cells.size(); ++k) {
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cells[k], &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != cells[k].size() || !std::isfinite(v)) {
                throw LoadError("'" + path + "' row " + std::to_string(row) + ", column '" + header[k] +
                                "': cannot parse '" + cells[k] + "'");
            }
            if (k == 0) {
                if (v != std::floor(v) || v < 0) {
                    throw LoadError("'" + path + "' row " + std::to_string(row) + ": label '" + cells[k] +
                                    "' is not a non-negative integer");
                }
                labels.push_back(static_cast<int>(v));
            } else {
                values.push_back(v);
            }
        }
    }
    RawData raw;
    const int n = static_cast<int>(labels.size());
    raw.x = Tensor({n, static_cast<int>(features), 1, 1});
    raw.x.data = std::move(values);
    raw.y = std::move(labels);
    raw.classes = raw.y.empty() ? 0 : *std::max_element(raw.y.begin(), raw.y.end()) + 1;
    return raw;
}

RawData make_synthetic(const SyntheticSpec& spec)
{
    if (spec.features < 1 || spec.informative < 1 || spec.informative > spec.features || spec.samples < 2 ||
        spec.classes < 2) {
        throw ConfigError("synthetic spec needs samples >= 2, classes >= 2 and 1 <= informative <= features");
    }
    Rng rng = make_rng(spec.seed, Stream::kData);
    std::vector<int> order(static_cast<std::size_t>(spec.features));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<int>(order));
    RawData raw;
    raw.informative.assign(order.begin(), order.begin() + spec.informative);
    std::sort(raw.informative.begin(), raw.informative.end());

    raw.x = Tensor({spec.samples, spec.features, 1, 1});
    for (auto& v : raw.x.data) {
        v = rng.normal();
    }
    std::vector<double> score(static_cast<std::size_t>(spec.samples));
    for (int n = 0; n < spec.samples; ++n) {
        const double* row = raw.x.ptr() + static_cast<std::size_t>(n) * spec.features;
        auto f = [&](int k) { return row[raw.informative[static_cast<std::size_t>(k)]]; };
        double s = 0.0;
        if (spec.informative >= 4) {
            s = (f(0) + f(1)) * (f(2) - f(3));
            for (int k = 4; k < spec.informative; ++k) {
                s += 0.5 * f(k);
            }
        } else {
            for (int k = 0; k < spec.informative; ++k) {
                s += f(k);
            }
        }
        score[static_cast<std::size_t>(n)] = s;
    }
    std::vector<double> sorted = score;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (int c = 1; c < spec.classes; ++c) {
        cuts.push_back(sorted[static_cast<std::size_t>(c) * sorted.size() / static_cast<std::size_t>(spec.classes)]);
    }
    raw.y.resize(score.size());
    for (std::size_t n = 0; n < score.size(); ++n) {
        raw.y[n] = static_cast<int>(std::upper_bound(cuts.begin(), cuts.end(), score[n]) - cuts.begin());
    }
    raw.classes = spec.classes;
    return raw;
}

Tensor gather_rows(const Tensor& x, std::span<const int> index)
{
    std::vector<int> shape = x.shape;
    const std::size_t row = x.size() / static_cast<std::size_t>(x.dim(0));
    shape[0] = static_cast<int>(index.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < index.size(); ++i) {
        const double* src = x.ptr() + static_cast<std::size_t>(index[i]) * row;
        std::copy(src, src + row, out.ptr() + i * row);
    }
    return out;
}

Dataset split_dataset(RawData raw, double eval_fraction, std::uint64_t seed, bool normalize, int max_samples)
{
    if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
        throw ConfigError("eval_fraction must lie in (0, 1)");
    }
    const int n = raw.x.dim(0);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed, Stream::kData);
    rng.shuffle(std::span<int>(order));
    if (max_samples > 0 && max_samples < n) {
        order.resize(static_cast<std::size_t>(max_samples));
    }
    const auto n_eval = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(order.size())));
    if (n_eval == 0 || n_eval >= order.size()) {
        throw ConfigError("split leaves an empty train or eval set");
    }
    std::vector<int> eval_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_eval));
    std::vector<int> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_eval), order.end());

    Dataset ds;
    ds.classes = raw.classes;
    ds.informative = raw.informative;
    ds.train_x = gather_rows(raw.x, train_idx);
    ds.eval_x = gather_rows(raw.x, eval_idx);
    for (int i : train_idx) {
        ds.train_y.push_back(raw.y[static_cast<std::size_t>(i)]);
    }
    for (int i : eval_idx) {
        ds.eval_y.push_back(raw.y[static_cast<std::size_t>(i)]);
    }

    if (normalize) {
        const std::size_t row = ds.train_x.size() / ds.train_y.size();
        std::vector<double> mean(row, 0.0);
        std::vector<double> sq(row, 0.0);
        const double count = static_cast<double>(ds.train_y.size());
        for (std::size_t s = 0; s < ds.train_y.size(); ++s) {
            for (std::size_t f = 0; f < row; ++f) {
                mean[f] += ds.train_x.data[s * row + f];
            }
        }
        for (auto& m : mean) {
            m /= count;
        }
        for (std::size_t s = 0; s < ds.train_y.size(); ++s) {
            for (std::size_t f = 0; f < row; ++f) {
                const double d = ds.train_x.data[s * row + f] - mean[f];
                sq[f] += d * d;
            }
        }
        std::vector<double> inv(row);
        for (std::size_t f = 0; f < row; ++f) {
            const double sd = std::sqrt(sq[f] / count);
            inv[f] = sd > 1e-12 ? 1.0 / sd : 1.0;
        }
        for (Tensor* t : {&ds.train_x, &ds.eval_x}) {
            for (std::size_t i = 0; i < t->size(); ++i) {
                const std::size_t f = i % row;
                t->data[i] = (t->data[i] - mean[f]) * inv[f];
            }
        }
    }
    return ds;
}

Dataset load_dataset(const DataConfig& cfg)
{
    RawData raw;
    if (cfg.format == "idx") {
        raw = load_idx(cfg.path, cfg.labels_path);
    } else if (cfg.format == "csv") {
        raw = load_csv(cfg.path);
    } else if (cfg.format == "synthetic") {
        raw = make_synthetic(cfg.synthetic);
    } else {
        throw ConfigError("unknown data format '" + cfg.format + "' (idx, csv, synthetic)");
    }
    if (cfg.classes > 0) {
        for (std::size_t i = 0; i < raw.y.size(); ++i) {
            if (raw.y[i] >= cfg.classes) {
                throw LoadError("label " + std::to_string(raw.y[i]) + " of sample " + std::to_string(i) +
                                " is outside [0, " + std::to_string(cfg.classes) + ")");
            }
        }
        raw.classes = cfg.classes;
    }
    return split_dataset(std::move(raw), cfg.eval_fraction, cfg.split_seed, cfg.normalize, cfg.max_samples);
}

} // namespace gatenas
