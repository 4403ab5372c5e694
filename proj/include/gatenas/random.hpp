#ifndef GATENAS_RANDOM_HPP
#define GATENAS_RANDOM_HPP

#include <cstdint>
#include <random>
#include <span>
#include <utility>

namespace gatenas {

// Explicitly seeded random stream. All derived values (uniform, normal,
// integer ranges) are computed here from raw engine output so sequences do
// not depend on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    std::uint64_t next() { return engine_(); }

    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::span<T> items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Named sub-streams derived from a run seed.
enum class Stream : std::uint64_t {
    kInit = 1,
    kNoise = 2,
    kShuffle = 3,
    kData = 4,
    kArchitecture = 5,
    kCheck = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream stream)
{
    return Rng(seed, static_cast<std::uint64_t>(stream));
}

} // namespace gatenas

#endif // GATENAS_RANDOM_HPP
