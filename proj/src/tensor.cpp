#include "gatenas/tensor.hpp"

#include <functional>
#include <numeric>

namespace gatenas {

std::size_t element_count(std::span<const int> shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

Tensor::Tensor(std::vector<int> dims, double fill)
    : shape(std::move(dims)), data(element_count(shape), fill)
{
}

} // namespace gatenas
