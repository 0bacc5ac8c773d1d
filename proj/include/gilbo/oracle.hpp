#pragma once

#include <optional>
#include <vector>

#include "gilbo/dists.hpp"
#include "gilbo/generators.hpp"

namespace gilbo {

// Joint probability table over (latent cell, output index).
class DiscreteJoint {
public:
    // Throws ValidationError unless entries are finite, >= 0 and sum to 1 within 1e-12.
    explicit DiscreteJoint(std::vector<std::vector<double>> p);

    std::size_t rows() const { return p_.size(); }
    std::size_t cols() const { return p_.empty() ? 0 : p_.front().size(); }
    double at(std::size_t i, std::size_t j) const { return p_[i][j]; }
    const std::vector<std::vector<double>>& table() const { return p_; }

    DiscreteJoint transpose() const;

private:
    std::vector<std::vector<double>> p_;
};

// Exact I(X;Z) in nats by direct summation, 0 log 0 = 0.
double mi_discrete(const DiscreteJoint& joint);

// Ordered cell edges partitioning (-1, 1); edges.front() = -1, edges.back() = 1.
struct CellPartition {
    Vec edges;

    static CellPartition uniform(int levels);
};

// IEEE-style binary format: `fraction_bits` stored mantissa bits, smallest
// normal exponent `min_exponent`, gradual underflow. Single precision is (23, -126).
struct FloatFormat {
    int fraction_bits = 23;
    int min_exponent = -126;

    static FloatFormat single() { return {}; }
};

// H(Q(Z)) in nats per dimension for Z uniform on (-1, 1). Since Q is deterministic
// this equals I(Z; Q(Z)).
double quantizer_entropy(const UniformBoxPrior& prior, const QuantizerParams& quant);
double quantizer_entropy(const UniformBoxPrior& prior, const CellPartition& cells);
// Round-to-nearest cast; cells grouped per binade, +0 and -0 kept distinct.
double quantizer_entropy(const UniformBoxPrior& prior, const FloatFormat& format);
double quantizer_entropy(const UniformBoxPrior& prior, const FloatCastParams& cast);

// Pinned ahead of time from an independent 50-digit binade sum and a full
// enumeration of all float32 cells in [0, 1].
inline constexpr double kFloat32CastEntropyNats = 18.021826720279359650;

struct DpiResult {
    double mi_fine;
    double mi_coarse;
    bool holds;
};

// Z -> X1 = q1(Z) -> X2 = q2(X1). mi_fine = I(Z;X1), mi_coarse = I(Z;X2), both
// from the exact (q1 cell, q2 cell) joint.
DpiResult dpi_check(const UniformBoxPrior& prior, const QuantizerParams& q1, const QuantizerParams& q2);

// Exact I(X;Z) for the analytic generators (sign, quantizer, float_cast); nullopt otherwise.
std::optional<double> oracle_mi(const Generator& gen);

} // namespace gilbo
