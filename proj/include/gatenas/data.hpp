#ifndef GATENAS_DATA_HPP
#define GATENAS_DATA_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gatenas/tensor.hpp"

namespace gatenas {

struct RawData {
    // (N, C, H, W); tabular data uses (N, F, 1, 1).
    Tensor x;
    std::vector<int> y;
    int classes = 0;
    // Synthetic data only: indices of the features that carry signal.
    std::vector<int> informative;
};

struct Dataset {
    Tensor train_x;
    std::vector<int> train_y;
    Tensor eval_x;
    std::vector<int> eval_y;
    int classes = 0;
    std::vector<int> informative;
};

struct SyntheticSpec {
    int samples = 2000;
    int features = 20;
    int informative = 4;
    int classes = 2;
    std::uint64_t seed = 7;
};

struct DataConfig {
    // idx | csv | synthetic
    std::string format = "synthetic";
    std::string path;
    // Label file for idx.
    std::string labels_path;
    double eval_fraction = 0.2;
    // 0 keeps every sample.
    int max_samples = 0;
    // 0 infers the class count from the labels.
    int classes = 0;
    bool normalize = true;
    std::uint64_t split_seed = 0;
    SyntheticSpec synthetic;
};

RawData load_idx(const std::string& images_path, const std::string& labels_path);
RawData load_csv(const std::string& path);
// Gaussian features; the label depends on `informative` of them through
// (x_a + x_b) * (x_c - x_d) (further informative features add linearly),
// cut at quantiles so classes are balanced.
RawData make_synthetic(const SyntheticSpec& spec);

// Seeded shuffle, eval split, and per-feature standardisation with train
// statistics only.
Dataset split_dataset(RawData raw, double eval_fraction, std::uint64_t seed, bool normalize, int max_samples = 0);

Dataset load_dataset(const DataConfig& cfg);

// Rows `index` of a (N, ...) tensor.
Tensor gather_rows(const Tensor& x, std::span<const int> index);

} // namespace gatenas

#endif // GATENAS_DATA_HPP
