#ifndef GATENAS_TENSOR_HPP
#define GATENAS_TENSOR_HPP

#include <cstddef>
#include <span>
#include <vector>

namespace gatenas {

std::size_t element_count(std::span<const int> shape);

// Dense row-major tensor of doubles. Activations use (N, C, H, W).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> dims, double fill = 0.0);

    [[nodiscard]] std::size_t size() const { return data.size(); }
    [[nodiscard]] int dim(std::size_t axis) const { return shape.at(axis); }
    [[nodiscard]] bool empty() const { return data.empty(); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    [[nodiscard]] double* ptr() { return data.data(); }
    [[nodiscard]] const double* ptr() const { return data.data(); }

    bool operator==(const Tensor&) const = default;
};

} // namespace gatenas

#endif // GATENAS_TENSOR_HPP
