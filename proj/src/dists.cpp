#include "gilbo/dists.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "gilbo/errors.hpp"

namespace gilbo {

namespace {

constexpr double kLn2 = std::numbers::ln2;

constexpr std::array<double, 9> kLanczos = {
    0.99999999999980993,  676.5203681218851,     -1259.1392167224028,
    771.32342877765313,   -176.61502916214059,   12.507343278686905,
    -0.13857109526572012, 9.9843695780195716e-6, 1.5056327351493116e-7};

void require_same_size(const Vec& a, const Vec& b, const char* what) {
    if (a.size() != b.size() || a.empty())
        throw ParameterError(std::string(what) + ": parameter vectors must be nonempty and equal length");
}

void require_dim(std::span<const double> z, int dim) {
    if (static_cast<int>(z.size()) != dim)
        throw ShapeError("expected vector of length " + std::to_string(dim) + ", got " +
                         std::to_string(z.size()));
}

} // namespace

double log_gamma(double x) {
    if (!(x > 0.0)) throw ParameterError("log_gamma: argument must be positive");
    if (x == 1.0 || x == 2.0) return 0.0;
    if (x < 0.5) {
        // Reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x).
        return std::log(std::numbers::pi / std::sin(std::numbers::pi * x)) - log_gamma(1.0 - x);
    }
    const double xm = x - 1.0;
    double a = kLanczos[0];
    for (std::size_t i = 1; i < kLanczos.size(); ++i) a += kLanczos[i] / (xm + static_cast<double>(i));
    const double t = xm + 7.5;
    return kHalfLog2Pi + (xm + 0.5) * std::log(t) - t + std::log(a);
}

double digamma(double x) {
    if (!(x > 0.0)) throw ParameterError("digamma: argument must be positive");
    double acc = 0.0;
    while (x < 10.0) {
        acc -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    const double series =
        inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132)))));
    return acc + std::log(x) - 0.5 * inv - series;
}

double log_beta_fn(double a, double b) {
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

double beta_log_pdf(double u, double a, double b) {
    // (a - 1) * log(u) is exactly 0 when a == 1, which keeps Beta(1, 1) exact.
    return (a - 1.0) * std::log(u) + (b - 1.0) * std::log1p(-u) - log_beta_fn(a, b);
}

BetaLogPdfGrad beta_log_pdf_grad(double u, double a, double b) {
    const double psi_ab = digamma(a + b);
    return {std::log(u) - digamma(a) + psi_ab, std::log1p(-u) - digamma(b) + psi_ab};
}

double remap_to_unit(double z) {
    if (!(std::abs(z) <= 1.0)) throw SupportError("remapped Beta: z outside [-1, 1]");
    z = std::clamp(z, -1.0 + kBetaBoundaryEps, 1.0 - kBetaBoundaryEps);
    return 0.5 * (z + 1.0);
}

UniformBoxPrior::UniformBoxPrior(int d) : dim(d) {
    if (d <= 0) throw ParameterError("UniformBoxPrior: dim must be positive");
}

bool UniformBoxPrior::contains(std::span<const double> z) const {
    if (static_cast<int>(z.size()) != dim) return false;
    for (double v : z)
        if (!(v > -1.0 && v < 1.0)) return false;
    return true;
}

double UniformBoxPrior::log_prob(std::span<const double> z) const {
    require_dim(z, dim);
    if (!contains(z)) throw SupportError("uniform box prior: z outside (-1, 1)^d");
    return -static_cast<double>(dim) * kLn2;
}

Vec UniformBoxPrior::sample(Rng& rng) const {
    Vec z(dim);
    for (auto& v : z) v = 2.0 * rng.uniform() - 1.0;
    return z;
}

StandardNormalPrior::StandardNormalPrior(int d) : dim(d) {
    if (d <= 0) throw ParameterError("StandardNormalPrior: dim must be positive");
}

double StandardNormalPrior::log_prob(std::span<const double> z) const {
    require_dim(z, dim);
    double lp = 0.0;
    for (double v : z) lp += -kHalfLog2Pi - 0.5 * v * v;
    return lp;
}

Vec StandardNormalPrior::sample(Rng& rng) const {
    Vec z(dim);
    for (auto& v : z) v = rng.normal();
    return z;
}

int latent_dim(const Prior& prior) {
    return std::visit([](const auto& p) { return p.dim; }, prior);
}

double log_prob(const Prior& prior, std::span<const double> z) {
    return std::visit([&](const auto& p) { return p.log_prob(z); }, prior);
}

Vec sample(const Prior& prior, Rng& rng) {
    return std::visit([&](const auto& p) { return p.sample(rng); }, prior);
}

bool is_box(const Prior& prior) { return std::holds_alternative<UniformBoxPrior>(prior); }

double prior_log_prob(const UniformBoxPrior& prior, std::span<const double> z) {
    return prior.log_prob(z);
}

RemappedBeta::RemappedBeta(Vec alpha, Vec beta) : alpha_(std::move(alpha)), beta_(std::move(beta)) {
    require_same_size(alpha_, beta_, "RemappedBeta");
    for (std::size_t i = 0; i < alpha_.size(); ++i) {
        if (!(alpha_[i] > 0.0) || !(beta_[i] > 0.0) || !std::isfinite(alpha_[i]) || !std::isfinite(beta_[i]))
            throw ParameterError("RemappedBeta: alpha and beta must be finite and positive");
    }
}

double RemappedBeta::log_prob(std::span<const double> z) const {
    require_dim(z, dim());
    double lp = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i)
        lp += beta_log_pdf(remap_to_unit(z[i]), alpha_[i], beta_[i]) - kLn2;
    return lp;
}

Vec RemappedBeta::sample(Rng& rng) const {
    constexpr double kLo = -1.0 + 0x1.0p-53;
    constexpr double kHi = 1.0 - 0x1.0p-53;
    Vec z(alpha_.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        z[i] = std::clamp(2.0 * rng.beta(alpha_[i], beta_[i]) - 1.0, kLo, kHi);
    return z;
}

DiagGaussian::DiagGaussian(Vec mean, Vec log_std) : mean_(std::move(mean)), log_std_(std::move(log_std)) {
    require_same_size(mean_, log_std_, "DiagGaussian");
    for (std::size_t i = 0; i < mean_.size(); ++i) {
        if (!std::isfinite(mean_[i]) || !std::isfinite(log_std_[i]))
            throw ParameterError("DiagGaussian: mean and log_std must be finite");
    }
}

double normal_log_pdf(double z, double mean, double log_std) {
    const double r = (z - mean) * std::exp(-log_std);
    return -log_std - kHalfLog2Pi - 0.5 * r * r;
}

double DiagGaussian::log_prob(std::span<const double> z) const {
    require_dim(z, dim());
    double lp = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) lp += normal_log_pdf(z[i], mean_[i], log_std_[i]);
    return lp;
}

Vec DiagGaussian::sample(Rng& rng) const {
    Vec z(mean_.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = mean_[i] + std::exp(log_std_[i]) * rng.normal();
    return z;
}

double DiagGaussian::entropy() const {
    double h = 0.0;
    for (double s : log_std_) h += s + kHalfLog2Pi + 0.5;
    return h;
}

} // namespace gilbo
