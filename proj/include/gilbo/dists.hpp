#pragma once

#include <span>
#include <variant>
#include <vector>

#include "gilbo/rng.hpp"

namespace gilbo {

using Vec = std::vector<double>;

// Clamp applied to remapped-Beta arguments before evaluation.
inline constexpr double kBetaBoundaryEps = 1e-6;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 ln(2 pi)

// Lanczos approximation (g = 7, 9 terms). Exact at 1 and 2.
double log_gamma(double x);
double digamma(double x);
double log_beta_fn(double a, double b);

// log Beta(u; a, b) on (0, 1); u must already be inside (0, 1).
double beta_log_pdf(double u, double a, double b);

struct BetaLogPdfGrad {
    double d_alpha;
    double d_beta;
};
BetaLogPdfGrad beta_log_pdf_grad(double u, double a, double b);

// Maps z in [-1, 1] to u = (z + 1) / 2 after clamping z to [-1 + eps, 1 - eps].
// Throws SupportError for |z| > 1 or NaN.
double remap_to_unit(double z);

// Uniform prior on the open box (-1, 1)^dim.
struct UniformBoxPrior {
    int dim = 1;

    explicit UniformBoxPrior(int d);

    bool contains(std::span<const double> z) const;
    double log_prob(std::span<const double> z) const;
    Vec sample(Rng& rng) const;
};

// N(0, I) prior, used by the Gaussian-decoder (VAE) generators.
struct StandardNormalPrior {
    int dim = 1;

    explicit StandardNormalPrior(int d);

    double log_prob(std::span<const double> z) const;
    Vec sample(Rng& rng) const;
};

using Prior = std::variant<UniformBoxPrior, StandardNormalPrior>;

int latent_dim(const Prior& prior);
double log_prob(const Prior& prior, std::span<const double> z);
Vec sample(const Prior& prior, Rng& rng);
bool is_box(const Prior& prior);

// -dim * ln 2; throws SupportError when z leaves the box.
double prior_log_prob(const UniformBoxPrior& prior, std::span<const double> z);

// Factorized Beta(alpha_i, beta_i) transported affinely to (-1, 1).
class RemappedBeta {
public:
    RemappedBeta(Vec alpha, Vec beta);

    int dim() const { return static_cast<int>(alpha_.size()); }
    const Vec& alpha() const { return alpha_; }
    const Vec& beta() const { return beta_; }

    double log_prob(std::span<const double> z) const;
    Vec sample(Rng& rng) const;

private:
    Vec alpha_;
    Vec beta_;
};

class DiagGaussian {
public:
    DiagGaussian(Vec mean, Vec log_std);

    int dim() const { return static_cast<int>(mean_.size()); }
    const Vec& mean() const { return mean_; }
    const Vec& log_std() const { return log_std_; }

    double log_prob(std::span<const double> z) const;
    Vec sample(Rng& rng) const;
    double entropy() const;

private:
    Vec mean_;
    Vec log_std_;
};

// ln N(z; mean, exp(log_std)^2), one dimension.
double normal_log_pdf(double z, double mean, double log_std);

} // namespace gilbo
