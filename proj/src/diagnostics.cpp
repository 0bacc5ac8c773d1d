#include "gilbo/diagnostics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <thread>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>

#include "gilbo/errors.hpp"

namespace gilbo {

void parallel_for(int n, int workers, const std::function<void(int)>& task) {
    if (n <= 0) return;
    int w = workers > 0 ? workers : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    w = std::min(w, n);
    if (w == 1) {
        for (int i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<int> next{0};
    std::mutex mu;
    int failed_index = std::numeric_limits<int>::max();
    std::exception_ptr failure;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(w));
    for (int t = 0; t < w; ++t) {
        threads.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    // Keep the lowest failing index so the rethrown error does not depend on scheduling.
                    std::lock_guard<std::mutex> lock(mu);
                    if (i < failed_index) {
                        failed_index = i;
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// SBC
// ---------------------------------------------------------------------------

std::int64_t RankHistogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

int rank_statistic(std::span<const double> draws, double truth) {
    int r = 0;
    for (double v : draws)
        if (v < truth) ++r;
    return r;
}

namespace {

void attach_band(RankHistogram& h) {
    const std::int64_t n = h.total();
    if (n == 0) return;
    const boost::math::binomial_distribution<double> dist(static_cast<double>(n), 1.0 / h.n_bins);
    // Boost rounds discrete quantiles outwards, so [lo, hi] keeps at least 99% of the mass.
    h.ci_low = static_cast<std::int64_t>(boost::math::quantile(dist, 0.005));
    h.ci_high = static_cast<std::int64_t>(boost::math::quantile(boost::math::complement(dist, 0.005)));
}

void check_binning(const SbcConfig& cfg) {
    if (cfg.draws_per_cycle < 1) throw BinningError("draws_per_cycle must be positive");
    if (cfg.n_bins < 1) throw BinningError("n_bins must be positive");
    if ((cfg.draws_per_cycle + 1) % cfg.n_bins != 0)
        throw BinningError("draws_per_cycle + 1 = " + std::to_string(cfg.draws_per_cycle + 1) +
                           " is not divisible by n_bins = " + std::to_string(cfg.n_bins));
}

} // namespace

RankHistogram sbc_ranks(const PairSource& source, const Encoder& encoder, int latent_dim, const SbcConfig& config) {
    check_binning(config);
    if (config.n_cycles < 0) throw ParameterError("n_cycles must be non-negative");
    RankHistogram h;
    h.n_bins = config.n_bins;
    h.draws_per_cycle = config.draws_per_cycle;
    h.n_cycles = config.n_cycles;
    h.latent_dim = latent_dim;
    h.counts.assign(static_cast<std::size_t>(config.n_bins), 0);
    h.per_dim.assign(static_cast<std::size_t>(latent_dim), std::vector<std::int64_t>(config.n_bins, 0));
    if (config.n_cycles == 0) {
        h.empty = true;
        h.error = "no SBC cycles were run";
        return h;
    }
    h.empty = false;

    const int per_bin = (config.draws_per_cycle + 1) / config.n_bins;
    Rng rng = Rng::stream(config.seed, 3);
    std::vector<Vec> draws(static_cast<std::size_t>(latent_dim), Vec(config.draws_per_cycle));
    for (int c = 0; c < config.n_cycles; ++c) {
        const Pair p = source(rng);
        for (int i = 0; i < config.draws_per_cycle; ++i) {
            const Vec z = encoder.sample(p.x, rng);
            for (int d = 0; d < latent_dim; ++d) draws[d][i] = z[d];
        }
        for (int d = 0; d < latent_dim; ++d) {
            const int bin = rank_statistic(draws[d], p.z[d]) / per_bin;
            ++h.per_dim[d][bin];
            ++h.counts[bin];
        }
    }
    attach_band(h);
    return h;
}

RankHistogram sbc(const Generator& gen, const Prior& prior, const Encoder& encoder, const SbcConfig& config) {
    if (encoder.latent_dim() != gen.latent_dim()) throw ShapeError("sbc: encoder latent_dim != generator latent_dim");
    return sbc_ranks([&](Rng& rng) { return draw_pair(gen, prior, rng); }, encoder, gen.latent_dim(), config);
}

double chi_square_statistic(const RankHistogram& h) {
    const std::int64_t n = h.total();
    if (n == 0) throw ValidationError("chi-square on an empty histogram");
    const double expected = static_cast<double>(n) / h.n_bins;
    double stat = 0.0;
    for (auto c : h.counts) {
        const double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return stat;
}

bool chi_square_uniform_passes(const RankHistogram& h, double alpha) {
    if (h.n_bins < 2) return true;
    const boost::math::chi_squared_distribution<double> dist(h.n_bins - 1);
    return chi_square_statistic(h) <= boost::math::quantile(boost::math::complement(dist, alpha));
}

double fraction_within_band(const RankHistogram& h) {
    if (h.empty || h.counts.empty()) return 0.0;
    int inside = 0;
    for (auto c : h.counts)
        if (c >= h.ci_low && c <= h.ci_high) ++inside;
    return static_cast<double>(inside) / static_cast<double>(h.counts.size());
}

CapShape detect_cap_shape(const RankHistogram& h) {
    CapShape s{false, false};
    if (h.empty || h.n_bins < 3) return s;
    const int lo = h.n_bins / 4;
    const int hi = h.n_bins - 1 - h.n_bins / 4;
    for (int b = lo; b <= hi; ++b)
        if (h.counts[b] > h.ci_high) s.central_excess = true;
    s.end_deficit = h.counts.front() < h.ci_low && h.counts.back() < h.ci_low;
    return s;
}

double central_mass_fraction(const RankHistogram& h) {
    const std::int64_t n = h.total();
    if (n == 0) return 0.0;
    const int lo = h.n_bins / 4;
    const int hi = h.n_bins - 1 - h.n_bins / 4;
    std::int64_t c = 0;
    for (int b = lo; b <= hi; ++b) c += h.counts[b];
    return static_cast<double>(c) / static_cast<double>(n);
}

ConjugateGaussianPosterior::ConjugateGaussianPosterior(double noise_std, double inflation)
    : noise_std_(noise_std), inflation_(inflation) {
    if (!(noise_std > 0.0) || !std::isfinite(noise_std)) throw ParameterError("noise_std must be positive");
    if (!(inflation > 0.0) || !std::isfinite(inflation)) throw ParameterError("inflation must be positive");
}

double ConjugateGaussianPosterior::log_prob(std::span<const double> x, std::span<const double> z) const {
    const double s2 = noise_std_ * noise_std_;
    const double mean = x[0] / (1.0 + s2);
    const double sd = inflation_ * std::sqrt(s2 / (1.0 + s2));
    return normal_log_pdf(z[0], mean, std::log(sd));
}

Vec ConjugateGaussianPosterior::sample(std::span<const double> x, Rng& rng) const {
    const double s2 = noise_std_ * noise_std_;
    const double mean = x[0] / (1.0 + s2);
    const double sd = inflation_ * std::sqrt(s2 / (1.0 + s2));
    return {mean + sd * rng.normal()};
}

Generator ConjugateGaussianPosterior::generator(double noise_std) {
    Mlp identity({1, 1}, Activation::tanh);
    identity.mutable_weights(0)[0] = 1.0;
    return Generator::gaussian_decoder(std::move(identity), {std::log(noise_std)}, PriorKind::standard_normal);
}

// ---------------------------------------------------------------------------
// Reproducibility
// ---------------------------------------------------------------------------

ReproReport reproducibility(const Generator& gen, const Prior& prior, const GilboConfig& config,
                            std::span<const std::uint64_t> seeds, int workers) {
    if (seeds.size() < 2) throw ParameterError("reproducibility needs at least 2 runs");
    config.validate();
    const int k = static_cast<int>(seeds.size());
    std::vector<std::optional<double>> values(static_cast<std::size_t>(k));
    parallel_for(k, workers, [&](int i) {
        GilboConfig c = config;
        c.seed = seeds[i];
        try {
            values[i] = measure_gilbo(gen, prior, c).estimate.nats;
        } catch (const DivergedError&) {
            values[i].reset();
        }
    });

    ReproReport r;
    for (int i = 0; i < k; ++i) {
        if (values[i]) {
            r.run_values.push_back(*values[i]);
            r.seeds.push_back(seeds[i]);
        } else {
            ++r.diverged;
        }
    }
    r.unreliable = 4 * r.diverged > k;
    if (r.run_values.empty()) return r;
    const double n = static_cast<double>(r.run_values.size());
    r.mean = std::accumulate(r.run_values.begin(), r.run_values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : r.run_values) ss += (v - r.mean) * (v - r.mean);
    r.std = r.run_values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    const auto [mn, mx] = std::minmax_element(r.run_values.begin(), r.run_values.end());
    r.abs_spread = *mx - *mn;
    if (r.mean > 0.1) r.rel_spread = r.std / r.mean;
    return r;
}

ReproReport reproducibility(const Generator& gen, const Prior& prior, const GilboConfig& config, int k_runs,
                            int workers) {
    if (k_runs < 2) throw ParameterError("reproducibility needs k_runs >= 2");
    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(k_runs));
    for (int i = 0; i < k_runs; ++i) seeds[i] = splitmix64(config.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
    return reproducibility(gen, prior, config, seeds, workers);
}

// ---------------------------------------------------------------------------
// Inversion
// ---------------------------------------------------------------------------

void InversionConfig::validate() const {
    if (max_steps < 1) throw ConfigError("inversion max_steps must be positive");
    if (restarts < 1) throw ConfigError("inversion restarts must be positive");
    if (!(failure_threshold > 0.0)) throw ConfigError("inversion failure_threshold must be positive");
    if (!(stop_residual >= 0.0)) throw ConfigError("inversion stop_residual must be non-negative");
    schedule.validate();
}

namespace {

const Mlp& mlp_of(const Generator& gen, const char* who) {
    const auto* p = std::get_if<MlpParams>(&gen.params());
    if (!p) throw UnsupportedKindError(std::string(who) + " requires an mlp_deterministic generator, got " +
                                       to_string(gen.kind()));
    return p->net;
}

double squared_residual(std::span<const double> a, std::span<const double> b) {
    double r = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) r += (a[j] - b[j]) * (a[j] - b[j]);
    return r;
}

InversionResult invert_with_rng(const Mlp& net, std::span<const double> x_target, const InversionConfig& cfg,
                                Rng& rng) {
    const int d = net.input_dim();
    const int r = cfg.restarts;
    // All restarts advance together as rows of one batch; Adam is elementwise, so
    // the rows evolve exactly as separate runs would.
    Vec u(static_cast<std::size_t>(r) * d);
    for (double& v : u) v = std::atanh(rng.uniform(-0.9, 0.9));
    AdamState adam(u.size());
    Matrix z(r, d);
    Matrix upstream(r, net.output_dim());
    Vec grad(u.size());

    InversionResult best;
    best.residual = std::numeric_limits<double>::infinity();
    std::int64_t step = 0;
    for (; step <= cfg.max_steps; ++step) {
        for (std::size_t i = 0; i < u.size(); ++i) z.data[i] = std::tanh(u[i]);
        const ForwardCache cache = net.forward(z);
        const Matrix& out = cache.output();
        for (int i = 0; i < r; ++i) {
            const double res = squared_residual(out.row(i), x_target);
            if (res < best.residual) {
                best.residual = res;
                best.z.assign(z.row(i).begin(), z.row(i).end());
            }
            for (int j = 0; j < net.output_dim(); ++j) upstream(i, j) = 2.0 * (out(i, j) - x_target[j]);
        }
        if (best.residual <= cfg.stop_residual || step == cfg.max_steps) break;
        const MlpGradients g = net.backward(cache, upstream);
        for (std::size_t i = 0; i < u.size(); ++i) grad[i] = g.input.data[i] * (1.0 - z.data[i] * z.data[i]);
        adam_step(u, grad, adam, cfg.schedule);
    }
    best.steps = step;
    best.failed = !(best.residual <= cfg.failure_threshold);
    return best;
}

} // namespace

InversionResult invert_sample(const Generator& gen, std::span<const double> x_target, const InversionConfig& config) {
    config.validate();
    const Mlp& net = mlp_of(gen, "invert_sample");
    if (static_cast<int>(x_target.size()) != gen.output_dim()) throw ShapeError("invert_sample: x_target has wrong length");
    Rng rng = Rng::stream(config.seed, 4);
    return invert_with_rng(net, x_target, config, rng);
}

// ---------------------------------------------------------------------------
// Tight bound
// ---------------------------------------------------------------------------

TightBoundResult tight_bound_from_recovered(const Prior& prior, const std::vector<Vec>& z_true,
                                            const std::vector<Vec>& z_recovered, double lo, double hi) {
    if (z_true.empty()) throw ParameterError("tight bound needs at least one sample");
    if (z_true.size() != z_recovered.size()) throw ShapeError("tight bound: z_true and z_recovered differ in length");
    if (!(lo < hi)) throw ParameterError("tight bound: empty log_std range");
    const std::size_t n = z_true.size();
    const int d = latent_dim(prior);

    // Per sample: squared distance and log p(z_true).
    Vec sq(n), log_p(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (static_cast<int>(z_true[i].size()) != d || static_cast<int>(z_recovered[i].size()) != d)
            throw ShapeError("tight bound: latent of wrong length");
        sq[i] = squared_residual(z_true[i], z_recovered[i]);
        log_p[i] = gilbo::log_prob(prior, z_true[i]);
    }
    auto term = [&](std::size_t i, double s) {
        return -0.5 * sq[i] * std::exp(-2.0 * s) - d * (s + kHalfLog2Pi) - log_p[i];
    };
    auto objective = [&](double s) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += term(i, s);
        return total / static_cast<double>(n);
    };

    // The objective is concave in log_std, so golden-section finds the interval maximum.
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    double a = lo, b = hi;
    double c = b - phi * (b - a), e = a + phi * (b - a);
    double fc = objective(c), fe = objective(e);
    for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
        if (fc >= fe) {
            b = e;
            e = c;
            fe = fc;
            c = b - phi * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + phi * (b - a);
            fe = objective(e);
        }
    }
    double s_best = 0.5 * (a + b);
    double f_best = objective(s_best);
    for (double s : {lo, hi}) {
        const double f = objective(s);
        if (f > f_best) {
            f_best = f;
            s_best = s;
        }
    }

    TightBoundResult out;
    out.per_sample_nats = f_best;
    out.fitted_log_std = s_best;
    if (n > 1) {
        double ss = 0.0;
        for (std::size_t i = 0; i < n; ++i) ss += (term(i, s_best) - f_best) * (term(i, s_best) - f_best);
        out.std_err = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    }
    out.z_true = z_true;
    out.z_recovered = z_recovered;
    return out;
}

TightBoundResult tight_gilbo(const Generator& gen, const Prior& prior, int n_samples, const InversionConfig& config,
                             int workers) {
    config.validate();
    const Mlp& net = mlp_of(gen, "tight_gilbo");
    if (n_samples < 1) throw ParameterError("tight_gilbo needs n_samples >= 1");
    if (latent_dim(prior) != gen.latent_dim()) throw ShapeError("tight_gilbo: prior dim != generator latent_dim");

    std::vector<Vec> z_true(static_cast<std::size_t>(n_samples));
    std::vector<Vec> x(static_cast<std::size_t>(n_samples));
    Rng data = Rng::stream(config.seed, 5);
    for (int i = 0; i < n_samples; ++i) {
        Pair p = draw_pair(gen, prior, data);
        z_true[i] = std::move(p.z);
        x[i] = std::move(p.x);
    }
    std::vector<InversionResult> inv(static_cast<std::size_t>(n_samples));
    parallel_for(n_samples, workers, [&](int i) {
        Rng rng = Rng::stream(config.seed, 1000 + static_cast<std::uint64_t>(i));
        inv[i] = invert_with_rng(net, x[i], config, rng);
    });

    int failed = 0;
    std::vector<Vec> recovered(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        if (inv[i].failed) ++failed;
        recovered[i] = inv[i].z;
    }
    if (failed == n_samples) throw ValidationError("tight_gilbo: every inversion failed");

    // Failed inversions stay in: their recovered z is still a legal encoder mean.
    TightBoundResult r = tight_bound_from_recovered(prior, z_true, recovered);
    r.n_failed = failed;
    r.inversion_residuals.reserve(inv.size());
    for (const auto& v : inv) r.inversion_residuals.push_back(v.residual);
    return r;
}

// ---------------------------------------------------------------------------
// Consistency tuples
// ---------------------------------------------------------------------------

std::vector<ConsistencyTuple> consistency_tuples(const Generator& gen, const Prior& prior, const Encoder& encoder,
                                                 int n_samples, int n_resamples, Rng& rng) {
    if (n_samples < 0 || n_resamples < 1) throw ParameterError("consistency_tuples: bad sample counts");
    std::vector<ConsistencyTuple> out;
    out.reserve(static_cast<std::size_t>(n_samples) * n_resamples);
    const double edge = 1.0 - std::ldexp(1.0, -53);
    for (int i = 0; i < n_samples; ++i) {
        const Pair p = draw_pair(gen, prior, rng);
        for (int k = 0; k < n_resamples; ++k) {
            Vec zr = encoder.sample(p.x, rng);
            Vec z_map = zr;
            if (is_box(prior))
                for (double& v : z_map) v = std::clamp(v, -edge, edge);
            out.push_back({i, k, p.z, p.x, std::move(zr), gen.map(z_map)});
        }
    }
    return out;
}

} // namespace gilbo
