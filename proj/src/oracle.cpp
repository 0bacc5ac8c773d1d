#include "gilbo/oracle.hpp"

#include <cmath>
#include <string>

#include "gilbo/errors.hpp"

namespace gilbo {

namespace {

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

} // namespace

DiscreteJoint::DiscreteJoint(std::vector<std::vector<double>> p) : p_(std::move(p)) {
    if (p_.empty() || p_.front().empty()) throw ValidationError("DiscreteJoint: empty table");
    long double total = 0.0L;
    for (const auto& row : p_) {
        if (row.size() != p_.front().size()) throw ValidationError("DiscreteJoint: ragged table");
        for (double v : row) {
            if (!std::isfinite(v) || v < 0.0) throw ValidationError("DiscreteJoint: negative or non-finite entry");
            total += v;
        }
    }
    if (std::abs(static_cast<double>(total) - 1.0) > 1e-12)
        throw ValidationError("DiscreteJoint: entries sum to " + std::to_string(static_cast<double>(total)) +
                              ", expected 1");
}

DiscreteJoint DiscreteJoint::transpose() const {
    std::vector<std::vector<double>> t(cols(), std::vector<double>(rows()));
    for (std::size_t i = 0; i < rows(); ++i)
        for (std::size_t j = 0; j < cols(); ++j) t[j][i] = p_[i][j];
    return DiscreteJoint(std::move(t));
}

double mi_discrete(const DiscreteJoint& joint) {
    const std::size_t n = joint.rows();
    const std::size_t m = joint.cols();
    std::vector<double> pz(n, 0.0), px(m, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            pz[i] += joint.at(i, j);
            px[j] += joint.at(i, j);
        }
    double mi = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            const double p = joint.at(i, j);
            if (p > 0.0) mi += p * std::log(p / (pz[i] * px[j]));
        }
    // Rounding can leave tiny negatives for independent tables.
    return mi < 0.0 && mi > -1e-15 ? 0.0 : mi;
}

CellPartition CellPartition::uniform(int levels) {
    if (levels < 1) throw PartitionError("uniform partition needs at least one cell");
    CellPartition c;
    c.edges.resize(static_cast<std::size_t>(levels) + 1);
    for (int i = 0; i <= levels; ++i) c.edges[i] = -1.0 + 2.0 * i / levels;
    c.edges.back() = 1.0;
    return c;
}

double quantizer_entropy(const UniformBoxPrior&, const CellPartition& cells) {
    const auto& e = cells.edges;
    if (e.size() < 2 || e.front() != -1.0 || e.back() != 1.0)
        throw PartitionError("cells must start at -1 and end at 1");
    double h = 0.0;
    for (std::size_t i = 0; i + 1 < e.size(); ++i) {
        if (!(e[i + 1] > e[i])) throw PartitionError("cell edges must be strictly increasing");
        h -= plogp(0.5 * (e[i + 1] - e[i]));
    }
    return h;
}

double quantizer_entropy(const UniformBoxPrior&, const QuantizerParams& quant) {
    if (quant.levels < 2) throw PartitionError("quantizer needs at least 2 levels");
    return std::log(static_cast<double>(quant.levels));
}

double quantizer_entropy(const UniformBoxPrior&, const FloatFormat& format) {
    if (format.fraction_bits < 1 || format.min_exponent > -1)
        throw PartitionError("float format must have fraction bits and a negative minimum exponent");
    // Work with log2 of cell widths on the positive half; the negative half mirrors it
    // and the prior mass of a cell of width w is w / 2.
    const long double ln2 = std::log(2.0L);
    const long double per_binade = std::ldexp(1.0L, format.fraction_bits);
    long double h = 0.0L;
    auto add = [&](long double count, long double log2_width, long double scale) {
        // count cells of width scale * 2^log2_width, mass w / 2
        const long double mass = scale * std::exp2(log2_width - 1.0L);
        h -= count * mass * (std::log(scale) + (log2_width - 1.0L) * ln2);
    };
    const long double sub_spacing = format.min_exponent - format.fraction_bits;
    add(1.0L, sub_spacing - 1.0L, 1.0L);              // zero: [0, spacing / 2]
    add(per_binade - 1.0L, sub_spacing, 1.0L);        // subnormals
    for (int e = format.min_exponent; e <= -1; ++e) {
        const long double spacing = e - format.fraction_bits;
        // First value of the binade sits between the previous spacing and this one.
        if (e == format.min_exponent)
            add(1.0L, spacing, 1.0L);
        else
            add(1.0L, spacing, 0.75L);
        add(per_binade - 1.0L, spacing, 1.0L);
    }
    add(1.0L, -format.fraction_bits - 2.0L, 1.0L);    // 1.0: [1 - spacing / 2, 1)
    return static_cast<double>(2.0L * h);
}

double quantizer_entropy(const UniformBoxPrior& prior, const FloatCastParams&) {
    return quantizer_entropy(prior, FloatFormat::single());
}

DpiResult dpi_check(const UniformBoxPrior&, const QuantizerParams& q1, const QuantizerParams& q2) {
    if (q1.levels < 2 || q2.levels < 2) throw PartitionError("quantizers need at least 2 levels");
    std::vector<std::vector<double>> fine(q1.levels, std::vector<double>(q1.levels, 0.0));
    std::vector<std::vector<double>> chain(q1.levels, std::vector<double>(q2.levels, 0.0));
    for (int i = 0; i < q1.levels; ++i) {
        const double mass = 1.0 / q1.levels;
        fine[i][i] = mass;
        chain[i][q2.cell_index(q1.midpoint(i))] += mass;
    }
    // Both outputs are functions of the q1 cell, so I(Z; X) is the MI of the (q1 cell, X) joint.
    DpiResult r;
    r.mi_fine = mi_discrete(DiscreteJoint(std::move(fine)));
    r.mi_coarse = mi_discrete(DiscreteJoint(std::move(chain)));
    r.holds = r.mi_coarse <= r.mi_fine + 1e-12;
    return r;
}

std::optional<double> oracle_mi(const Generator& gen) {
    const UniformBoxPrior prior(gen.latent_dim());
    const double d = gen.latent_dim();
    switch (gen.kind()) {
        case GeneratorKind::sign: return d * std::log(2.0);
        case GeneratorKind::quantizer: return d * quantizer_entropy(prior, std::get<QuantizerParams>(gen.params()));
        case GeneratorKind::float_cast: return d * quantizer_entropy(prior, FloatCastParams{});
        default: return std::nullopt;
    }
}

} // namespace gilbo
