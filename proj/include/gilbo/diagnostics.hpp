#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gilbo/dists.hpp"
#include "gilbo/estimator.hpp"
#include "gilbo/generators.hpp"

namespace gilbo {

// ---------------------------------------------------------------------------
// Simulation-based calibration
// ---------------------------------------------------------------------------

struct SbcConfig {
    int n_cycles = 1000;
    int draws_per_cycle = 128;
    int n_bins = 43;  // must divide draws_per_cycle + 1
    std::uint64_t seed = 0;
};

struct RankHistogram {
    int n_bins = 0;
    int draws_per_cycle = 0;
    int n_cycles = 0;
    int latent_dim = 0;
    std::vector<std::int64_t> counts;                 // pooled over dimensions
    std::vector<std::vector<std::int64_t>> per_dim;   // per_dim[d][bin]
    std::int64_t ci_low = 0;                          // 0.5% binomial quantile per bin
    std::int64_t ci_high = 0;                         // 99.5% binomial quantile per bin
    bool empty = true;                                // no cycles were run
    std::string error;

    std::int64_t total() const;
};

// (z', x') ~ p(z) p(x | z)
using PairSource = std::function<Pair(Rng&)>;

// Number of the draws strictly less than the truth; ties count as not less.
int rank_statistic(std::span<const double> draws, double truth);

// Generic SBC loop: each cycle draws (z', x'), then draws_per_cycle samples from
// encoder(. | x'), and records the per-dimension rank of z'.
RankHistogram sbc_ranks(const PairSource& source, const Encoder& encoder, int latent_dim, const SbcConfig& config);

RankHistogram sbc(const Generator& gen, const Prior& prior, const Encoder& encoder, const SbcConfig& config);

// Pearson chi-square against uniform bins.
double chi_square_statistic(const RankHistogram& h);
bool chi_square_uniform_passes(const RankHistogram& h, double alpha = 0.01);
// Fraction of pooled bins with ci_low <= count <= ci_high.
double fraction_within_band(const RankHistogram& h);

struct CapShape {
    bool central_excess;  // some central bin above ci_high
    bool end_deficit;     // both end bins below ci_low
    bool detected() const { return central_excess && end_deficit; }
};
CapShape detect_cap_shape(const RankHistogram& h);
// Share of pooled counts in the central half of the bins.
double central_mass_fraction(const RankHistogram& h);

// 1-D conjugate control: z ~ N(0, 1), x | z ~ N(z, s^2). The exact posterior is
// N(x / (1 + s^2), s^2 / (1 + s^2)); `inflation` scales its std.
class ConjugateGaussianPosterior final : public Encoder {
public:
    ConjugateGaussianPosterior(double noise_std, double inflation = 1.0);

    int latent_dim() const override { return 1; }
    double log_prob(std::span<const double> x, std::span<const double> z) const override;
    Vec sample(std::span<const double> x, Rng& rng) const override;

    static Generator generator(double noise_std);

private:
    double noise_std_;
    double inflation_;
};

// ---------------------------------------------------------------------------
// Reproducibility
// ---------------------------------------------------------------------------

struct ReproReport {
    std::vector<double> run_values;   // nats of the runs that finished
    std::vector<std::uint64_t> seeds; // seed of each finished run
    double mean = 0.0;
    double std = 0.0;                 // sample std
    std::optional<double> rel_spread; // std / mean, only when mean > 0.1 nats
    double abs_spread = 0.0;          // max - min
    int diverged = 0;
    bool unreliable = false;          // more than 25% of runs diverged
};

// One full train + estimate per seed; seeds may repeat.
ReproReport reproducibility(const Generator& gen, const Prior& prior, const GilboConfig& config,
                            std::span<const std::uint64_t> seeds, int workers = 1);
// k_runs independent seeds derived from config.seed.
ReproReport reproducibility(const Generator& gen, const Prior& prior, const GilboConfig& config, int k_runs,
                            int workers = 1);

// ---------------------------------------------------------------------------
// Latent inversion and the per-sample tight bound
// ---------------------------------------------------------------------------

struct InversionConfig {
    std::int64_t max_steps = 150000;
    LrSchedule schedule{0.05, 0.5, 2000};
    int restarts = 4;
    double failure_threshold = 1e-6;  // squared residual above this flags failure
    double stop_residual = 1e-24;     // early exit once reached
    std::uint64_t seed = 0;

    void validate() const;
};

struct InversionResult {
    Vec z;
    double residual = 0.0;  // |x - g(z)|^2
    std::int64_t steps = 0;
    bool failed = false;
};

// Minimizes |x_target - g(z)|^2 over z = tanh(u) with Adam, best of `restarts`
// random initializations. Requires an mlp_deterministic generator.
InversionResult invert_sample(const Generator& gen, std::span<const double> x_target, const InversionConfig& config);

struct TightBoundResult {
    double per_sample_nats = 0.0;
    std::optional<double> std_err;  // omitted for a single sample
    double fitted_log_std = 0.0;
    std::vector<double> inversion_residuals;
    int n_failed = 0;
    std::vector<Vec> z_true;
    std::vector<Vec> z_recovered;
};

inline constexpr double kTightLogStdLow = -12.0;
inline constexpr double kTightLogStdHigh = 0.0;

// Per-sample encoders N(z'_i, sigma^2 I) with one shared sigma, chosen by
// golden-section search over log sigma in [lo, hi].
TightBoundResult tight_bound_from_recovered(const Prior& prior, const std::vector<Vec>& z_true,
                                            const std::vector<Vec>& z_recovered, double lo = kTightLogStdLow,
                                            double hi = kTightLogStdHigh);

TightBoundResult tight_gilbo(const Generator& gen, const Prior& prior, int n_samples, const InversionConfig& config,
                             int workers = 1);

// ---------------------------------------------------------------------------
// Consistency tuples: (z, x, z resampled from e(z|x), g(z resampled))
// ---------------------------------------------------------------------------

struct ConsistencyTuple {
    int sample = 0;
    int draw = 0;
    Vec z;
    Vec x;
    Vec z_resample;
    Vec x_reconstruction;
};

std::vector<ConsistencyTuple> consistency_tuples(const Generator& gen, const Prior& prior, const Encoder& encoder,
                                                 int n_samples, int n_resamples, Rng& rng);

// Runs task(i) for i in [0, n) on up to `workers` threads (0 = hardware concurrency).
void parallel_for(int n, int workers, const std::function<void(int)>& task);

} // namespace gilbo
