#pragma once

#include <cstdint>
#include <random>

namespace gilbo {

// Seeded random stream. The engine is std::mt19937_64, whose output sequence is
// fixed by the standard; all variate transforms are done here rather than via
// <random> distributions so draws are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Independent stream derived from (seed, stream) via splitmix64.
    static Rng stream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64() { return engine_(); }

    // Uniform on the open interval (0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    // Gamma(shape, 1), Marsaglia–Tsang.
    double gamma(double shape);
    // Beta(a, b) on (0, 1).
    double beta(double a, double b);
    std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }

private:
    double log_gamma_variate(double shape);

    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

} // namespace gilbo
