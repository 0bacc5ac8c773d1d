#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "doctest.h"

#include "gilbo/errors.hpp"
#include "gilbo/estimator.hpp"
#include "gilbo/oracle.hpp"
#include "support.hpp"

using namespace gilbo;
using namespace gilbo::testing;

namespace {

const double kLn2 = std::numbers::ln2;

EncoderHead head_for(EncoderFamily f, int d, int k) {
    return EncoderHead(Mlp({1, EncoderHead::raw_width(f, d, k)}, Activation::tanh), f, d, k);
}

Vec init_raw(EncoderFamily f, int d, int k, Rng& rng, double noise) {
    Rng init(3);
    auto head = EncoderHead::make(1, d, f, k, {}, Activation::tanh, init);
    auto b = head.body().biases(0);
    Vec raw(b.begin(), b.end());
    for (double& r : raw) r += noise * rng.normal();
    return raw;
}

// 200-step window means never fall by more than 3 combined standard errors.
double ascent_fraction(const std::vector<double>& obj, std::size_t window = 200) {
    std::vector<double> mean, se;
    for (std::size_t s = 0; s + window <= obj.size(); s += window) {
        double a = 0, q = 0;
        for (std::size_t i = s; i < s + window; ++i) {
            a += obj[i];
            q += obj[i] * obj[i];
        }
        const double m = a / window;
        mean.push_back(m);
        se.push_back(std::sqrt(std::max(0.0, q / window - m * m) / (window - 1)));
    }
    int ok = 0;
    for (std::size_t w = 1; w < mean.size(); ++w)
        ok += mean[w] >= mean[w - 1] - 3 * std::hypot(se[w], se[w - 1]);
    return mean.size() < 2 ? 1.0 : static_cast<double>(ok) / (mean.size() - 1);
}

} // namespace

TEST_CASE("softplus and the shape floor") {
    CHECK(softplus(0.0) == doctest::Approx(kLn2).epsilon(1e-15));
    CHECK(softplus(50.0) == 50.0);
    CHECK(softplus(-50.0) == doctest::Approx(std::exp(-50.0)).epsilon(1e-12));
    CHECK(positive_shape(-50.0) == kBetaParamFloor);
    CHECK(positive_shape(3.0) == doctest::Approx(std::log1p(std::exp(3.0))).epsilon(1e-15));
}

TEST_CASE("raw output widths") {
    CHECK(EncoderHead::raw_width(EncoderFamily::remapped_beta, 3, 1) == 6);
    CHECK(EncoderHead::raw_width(EncoderFamily::diag_gaussian, 3, 1) == 6);
    CHECK(EncoderHead::raw_width(EncoderFamily::remapped_beta_mixture, 3, 4) == 42);
    CHECK_THROWS_AS(EncoderHead(Mlp({1, 5}, Activation::tanh), EncoderFamily::remapped_beta, 3), ShapeError);
    CHECK(encoder_family_from_string(to_string(EncoderFamily::remapped_beta_mixture)) ==
          EncoderFamily::remapped_beta_mixture);
    CHECK_THROWS_AS(encoder_family_from_string("flow"), ConfigError);
}

TEST_CASE("plain Beta head matches RemappedBeta") {
    auto head = head_for(EncoderFamily::remapped_beta, 2, 1);
    Vec raw{0.3, -1.0, 2.0, 0.1};
    RemappedBeta ref(Vec{positive_shape(0.3), positive_shape(-1.0)}, Vec{positive_shape(2.0), positive_shape(0.1)});
    Vec z{0.25, -0.8};
    CHECK(head.log_prob_from_raw(raw, z, {}) == doctest::Approx(ref.log_prob(z)).epsilon(1e-14));
    auto g = head_for(EncoderFamily::diag_gaussian, 2, 1);
    DiagGaussian gref(Vec{0.3, -1.0}, Vec{2.0, 0.1});
    CHECK(g.log_prob_from_raw(raw, z, {}) == doctest::Approx(gref.log_prob(z)).epsilon(1e-14));
}

TEST_CASE("head gradients match finite differences") {
    Rng rng(1);
    struct Case {
        EncoderFamily f;
        int d;
        int k;
    };
    for (Case c : {Case{EncoderFamily::remapped_beta, 3, 1}, Case{EncoderFamily::diag_gaussian, 3, 1},
                   Case{EncoderFamily::remapped_beta_mixture, 2, 1}, Case{EncoderFamily::remapped_beta_mixture, 2, 5},
                   Case{EncoderFamily::remapped_beta_mixture, 1, 16}}) {
        auto head = head_for(c.f, c.d, c.k);
        for (int rep = 0; rep < 10; ++rep) {
            Vec raw = c.f == EncoderFamily::remapped_beta_mixture ? init_raw(c.f, c.d, c.k, rng, 0.7)
                                                                   : Vec(head.body().output_dim());
            if (c.f != EncoderFamily::remapped_beta_mixture)
                for (double& r : raw) r = rng.uniform(-2, 2);
            Vec z(c.d);
            for (double& v : z) v = rng.uniform(-0.95, 0.95);
            Vec grad(raw.size());
            head.log_prob_from_raw(raw, z, grad);
            for (std::size_t i = 0; i < raw.size(); ++i) {
                const double h = 1e-5;
                Vec p = raw, m = raw;
                p[i] += h;
                m[i] -= h;
                const double num = (head.log_prob_from_raw(p, z, {}) - head.log_prob_from_raw(m, z, {})) / (2 * h);
                CHECK(fd_relative_error(grad[i], num) < 1e-4);
            }
        }
    }
}

namespace {

// Component weights and Beta shapes of a one-dimensional mixture, rebuilt from the
// layout [logits | delta | log_conc | loc | log_width] without touching the library.
struct OracleComponent {
    double weight, alpha, beta;
};

std::vector<OracleComponent> oracle_components(const Vec& raw, int k) {
    const double lw = std::clamp(raw[3 * k + 1], -20.0, 5.0);
    const double w = std::exp(lw);
    double norm = 0.0;
    for (int c = 0; c < k; ++c) norm += std::exp(raw[c]);
    std::vector<OracleComponent> out;
    for (int c = 0; c < k; ++c) {
        const double t = k == 1 ? 0.0 : -1.0 + 2.0 * c / (k - 1);
        const double m = 1.0 / (1.0 + std::exp(-(raw[3 * k] + w * t + raw[k + c])));
        const double kappa = std::exp(std::min(raw[2 * k + c] - 2.0 * lw, 20.0));
        out.push_back({std::exp(raw[c]) / norm, std::max(m * kappa, 1e-4), std::max((1.0 - m) * kappa, 1e-4)});
    }
    return out;
}

// Exact mixture mass of z in [lo, hi].
double oracle_mass(const std::vector<OracleComponent>& comps, double lo, double hi) {
    double p = 0.0;
    for (const auto& c : comps)
        p += c.weight * (boost::math::ibeta(c.alpha, c.beta, 0.5 * (hi + 1.0)) -
                         boost::math::ibeta(c.alpha, c.beta, 0.5 * (lo + 1.0)));
    return p;
}

double oracle_density(const std::vector<OracleComponent>& comps, double z) {
    double p = 0.0;
    for (const auto& c : comps)
        p += c.weight * 0.5 * boost::math::pdf(boost::math::beta_distribution<double>(c.alpha, c.beta), 0.5 * (z + 1.0));
    return p;
}

} // namespace

TEST_CASE("mixture density integrates to one") {
    // Inside the clamp band the density is the plain mixture; the two band tails
    // carry whatever mass a Beta spike puts within eps of the boundary.
    const double eps = kBetaBoundaryEps;
    boost::math::quadrature::tanh_sinh<double> q;
    Rng rng(2);
    for (int k : {1, 3, 16}) {
        auto head = head_for(EncoderFamily::remapped_beta_mixture, 1, k);
        for (int rep = 0; rep < 5; ++rep) {
            Vec raw = init_raw(EncoderFamily::remapped_beta_mixture, 1, k, rng, 0.3);
            const auto comps = oracle_components(raw, k);
            auto f = [&](double z) { return std::exp(head.log_prob_from_raw(raw, Vec{z}, {})); };
            for (double z : {-0.999, -0.6, -0.1, 0.0, 0.37, 0.8, 0.9999})
                CHECK(f(z) == doctest::Approx(oracle_density(comps, z)).epsilon(1e-10));
            // Split at every component mean so no peak sits inside one tanh_sinh panel.
            std::vector<double> cuts{-1.0 + eps, 1.0 - eps};
            for (const auto& c : comps) cuts.push_back(std::clamp(2.0 * c.alpha / (c.alpha + c.beta) - 1.0, -1.0 + eps, 1.0 - eps));
            std::sort(cuts.begin(), cuts.end());
            double mass = oracle_mass(comps, -1.0, -1.0 + eps) + oracle_mass(comps, 1.0 - eps, 1.0);
            for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
                if (cuts[i + 1] > cuts[i]) mass += q.integrate(f, cuts[i], cuts[i + 1]);
            CHECK(std::abs(mass - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("mixture samples follow the mixture density") {
    Rng rng(3);
    auto head = head_for(EncoderFamily::remapped_beta_mixture, 1, 4);
    Vec raw = init_raw(EncoderFamily::remapped_beta_mixture, 1, 4, rng, 1.0);
    const auto comps = oracle_components(raw, 4);
    const int n = 100000, bins = 10;
    std::vector<int> hist(bins, 0);
    for (int i = 0; i < n; ++i) {
        double z = head.sample_from_raw(raw, rng)[0];
        REQUIRE((z > -1.0 && z < 1.0));
        ++hist[std::min(bins - 1, static_cast<int>((z + 1.0) / 2.0 * bins))];
    }
    for (int b = 0; b < bins; ++b) {
        const double lo = -1.0 + 2.0 * b / bins, hi = lo + 2.0 / bins;
        const double p = oracle_mass(comps, lo, hi);
        const double se = std::sqrt(p * (1 - p) / n);
        CHECK(std::abs(static_cast<double>(hist[b]) / n - p) < 4 * se + 1e-9);
    }
}

TEST_CASE("single-component mixture starts at the prior") {
    Rng rng(4);
    auto head = EncoderHead::make(2, 1, EncoderFamily::remapped_beta_mixture, 1, {}, Activation::tanh, rng);
    auto zero_w = head.body().mutable_weights(0);
    std::fill(zero_w.begin(), zero_w.end(), 0.0);
    for (double z : {-0.9, -0.2, 0.4, 0.95}) CHECK(head.log_prob(Vec{0.0, 0.0}, Vec{z}) == doctest::Approx(-kLn2).epsilon(1e-12));
}

TEST_CASE("prior encoder gives exactly zero") {
    Rng rng(5);
    for (const auto& g : {Generator::sign(3), Generator::quantizer(1, 16)}) {
        PriorEncoder enc(g.prior());
        auto est = estimate(g, g.prior(), enc, 50, 64, rng);
        CHECK(est.nats == 0.0);
        CHECK(est.std_err == 0.0);
        CHECK(est.bits == 0.0);
        CHECK(est.n_samples == 50 * 64);
    }
    auto g = Generator::sign(1);
    auto head = head_for(EncoderFamily::remapped_beta, 1, 1);
    auto b = head.body().mutable_biases(0);
    b[0] = b[1] = std::log(std::expm1(1.0));
    auto est = estimate(g, g.prior(), head, 30, 64, rng);
    CHECK(std::abs(est.nats) < 1e-12);
}

TEST_CASE("bits are nats over ln 2") {
    Rng rng(6);
    auto g = Generator::sign(1);
    auto head = head_for(EncoderFamily::remapped_beta, 1, 1);
    auto b = head.body().mutable_biases(0);
    b[0] = 0.3;
    auto est = estimate(g, g.prior(), head, 30, 64, rng);
    CHECK(est.bits == est.nats / kLn2);
    CHECK(est.std_err > 0.0);
}

TEST_CASE("config validation") {
    GilboConfig c;
    CHECK_NOTHROW(c.validate());
    c.eval_batches = 29;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = GilboConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = GilboConfig{};
    c.family = EncoderFamily::remapped_beta;
    auto vae_like = Generator::gaussian_decoder(Mlp({1, 1}, Activation::tanh), Vec{0.0});
    CHECK_THROWS_AS(train_encoder(vae_like, vae_like.prior(), c), ConfigError);
    CHECK(GilboConfig{}.resolved_family(UniformBoxPrior(1)) == EncoderFamily::remapped_beta_mixture);
    CHECK(GilboConfig{}.resolved_family(StandardNormalPrior(1)) == EncoderFamily::diag_gaussian);
}

TEST_CASE("training and evaluation are deterministic and use disjoint streams") {
    GilboConfig c;
    c.max_steps = 300;
    c.seed = 17;
    auto g = Generator::quantizer(1, 4);
    auto a = measure_gilbo(g, g.prior(), c), b = measure_gilbo(g, g.prior(), c);
    CHECK(a.estimate.nats == b.estimate.nats);
    CHECK(a.training.step_objectives == b.training.step_objectives);
    CHECK(a.estimate.steps_run == 300);
    CHECK_FALSE(a.estimate.converged);
    CHECK(a.estimate.training_curve.size() == 3);
    c.seed = 18;
    CHECK(measure_gilbo(g, g.prior(), c).estimate.nats != a.estimate.nats);
}

TEST_CASE("constant generator trains to about zero") {
    auto g = Generator::constant(1, 1);
    auto m = measure_gilbo(g, g.prior(), GilboConfig{});
    CHECK(m.estimate.nats >= -0.05);
    CHECK(m.estimate.nats <= 0.02);
    CHECK(ascent_fraction(m.training.step_objectives) >= 0.95);
}

TEST_CASE("sign and quantizer examples") {
    GilboConfig c;
    auto s1 = Generator::sign(1), s2 = Generator::sign(2), q16 = Generator::quantizer(1, 16);
    auto m1 = measure_gilbo(s1, s1.prior(), c);
    auto m2 = measure_gilbo(s2, s2.prior(), c);
    auto mq = measure_gilbo(q16, q16.prior(), c);
    MESSAGE("sign d=1 " << m1.estimate.nats << ", sign d=2 " << m2.estimate.nats << ", quantizer K=16 "
                        << mq.estimate.nats);

    CHECK(std::abs(m1.estimate.nats - kLn2) <= 0.02);
    CHECK(std::abs(m2.estimate.nats - 2 * kLn2) <= 0.03);
    CHECK(mq.estimate.nats >= 0.95 * std::log(16.0));
    CHECK(mq.estimate.nats <= std::log(16.0));
    CHECK(mq.estimate.nats <= std::log(16.0) + 3 * mq.estimate.std_err);

    // Independent dimensions add.
    const double combined = std::hypot(m2.estimate.std_err, 2 * m1.estimate.std_err);
    CHECK(std::abs(m2.estimate.nats - 2 * m1.estimate.nats) <= 3 * combined);

    for (const auto* m : {&m1, &m2, &mq}) CHECK(ascent_fraction(m->training.step_objectives) >= 0.95);
}

TEST_CASE("lower-bound property over seeds") {
    GilboConfig c;
    c.max_steps = 3000;
    for (const auto& g : {Generator::sign(1), Generator::quantizer(1, 4), Generator::quantizer(2, 2)}) {
        const double mi = *oracle_mi(g);
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            c.seed = seed;
            auto m = measure_gilbo(g, g.prior(), c);
            CHECK(m.estimate.nats <= mi + 3 * m.estimate.std_err);
        }
    }
}

TEST_CASE("Gaussian-prior generators train a Gaussian encoder") {
    Mlp identity({1, 1}, Activation::tanh);
    identity.mutable_weights(0)[0] = 1.0;
    auto g = Generator::gaussian_decoder(identity, Vec{std::log(0.5)});
    GilboConfig c;
    c.max_steps = 4000;
    auto m = measure_gilbo(g, g.prior(), c);
    CHECK(m.training.encoder.family() == EncoderFamily::diag_gaussian);
    // x = z + 0.5 eps with z ~ N(0, 1): I = 0.5 ln(1 + 1 / 0.25).
    const double mi = 0.5 * std::log(5.0);
    CHECK(m.estimate.nats <= mi + 3 * m.estimate.std_err);
    CHECK(m.estimate.nats >= mi - 0.03);
}

TEST_CASE("annotate examples") {
    Signposts c10;
    c10.log_C = std::log(10.0);
    CHECK(annotate(0.1, c10) == band::kBelowLogC);
    Signposts n;
    n.log_N = std::log(50000.0);
    CHECK(annotate(10.9, n) == band::kLogNTo2LogN);
    Signposts h;
    h.H_X = 80.2;
    CHECK(annotate(90.0, h) == band::kAboveHX);
    CHECK(annotate(1.0, Signposts{}) == band::kUnclassified);

    Signposts all;
    all.log_C = std::log(10.0);
    all.log_N = std::log(50000.0);
    all.H_X = 80.2;
    CHECK(annotate(1.0, all) == band::kBelowLogC);
    CHECK(annotate(5.0, all) == band::kLogCToLogN);
    CHECK(annotate(15.0, all) == band::kLogNTo2LogN);
    CHECK(annotate(40.0, all) == band::k2LogNToHX);
    CHECK(annotate(80.2, all) == band::k2LogNToHX);
    CHECK(annotate(81.0, all) == band::kAboveHX);
    CHECK(all.warnings().empty());

    GilboEstimate e;
    e.nats = 0.01;
    CHECK(annotate(e, c10) == band::kBelowLogC);

    Signposts bad;
    bad.log_C = 5.0;
    bad.log_N = 2.0;
    CHECK(bad.warnings().size() == 1);
}
