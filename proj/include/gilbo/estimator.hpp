#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gilbo/dists.hpp"
#include "gilbo/generators.hpp"
#include "gilbo/nn.hpp"

namespace gilbo {

// A tractable conditional density e(z | x).
class Encoder {
public:
    virtual ~Encoder() = default;

    virtual int latent_dim() const = 0;
    virtual double log_prob(std::span<const double> x, std::span<const double> z) const = 0;
    virtual Vec sample(std::span<const double> x, Rng& rng) const = 0;

    // Row-wise log e(z_i | x_i); override for batched evaluation.
    virtual Vec log_prob_batch(const Matrix& x, const Matrix& z) const;
};

// e(z | x) = p(z): the encoder that learned nothing.
class PriorEncoder final : public Encoder {
public:
    explicit PriorEncoder(Prior prior) : prior_(std::move(prior)) {}

    int latent_dim() const override { return gilbo::latent_dim(prior_); }
    double log_prob(std::span<const double>, std::span<const double> z) const override {
        return gilbo::log_prob(prior_, z);
    }
    Vec sample(std::span<const double>, Rng& rng) const override { return gilbo::sample(prior_, rng); }

private:
    Prior prior_;
};

enum class EncoderFamily { remapped_beta, remapped_beta_mixture, diag_gaussian };

std::string to_string(EncoderFamily f);
EncoderFamily encoder_family_from_string(const std::string& s);

// Floor applied after softplus to every Beta shape parameter.
inline constexpr double kBetaParamFloor = 1e-4;

double softplus(double r);
double positive_shape(double raw);

// MLP body whose linear output parameterizes e(z | x).
//   remapped_beta:         [alpha_raw(d) | beta_raw(d)]
//   remapped_beta_mixture: per dim, [logits(K) | delta(K) | log_conc(K) | loc | log_width];
//                          component means tile a learned logit window (see estimator.cpp)
//   diag_gaussian:         [mean(d) | log_std(d)]
class EncoderHead final : public Encoder {
public:
    EncoderHead(Mlp body, EncoderFamily family, int latent_dim, int components = 1);

    // Glorot body [input_dim, hidden..., raw_width] with the final bias set so the
    // initial encoder is close to the prior (mixture components spread over (-1, 1)).
    static EncoderHead make(int input_dim, int latent_dim, EncoderFamily family, int components,
                            const std::vector<int>& hidden, Activation act, Rng& rng);

    static int raw_width(EncoderFamily family, int latent_dim, int components);

    int latent_dim() const override { return latent_dim_; }
    EncoderFamily family() const { return family_; }
    int components() const { return components_; }
    const Mlp& body() const { return body_; }
    Mlp& body() { return body_; }

    double log_prob(std::span<const double> x, std::span<const double> z) const override;
    Vec sample(std::span<const double> x, Rng& rng) const override;
    Vec log_prob_batch(const Matrix& x, const Matrix& z) const override;

    // log e(z | raw) for one raw output row; fills d/d raw when grad is non-empty.
    double log_prob_from_raw(std::span<const double> raw, std::span<const double> z, std::span<double> grad) const;
    Vec sample_from_raw(std::span<const double> raw, Rng& rng) const;

    // Closed-form family distribution at x (not defined for mixtures).
    RemappedBeta beta_at(std::span<const double> x) const;
    DiagGaussian gaussian_at(std::span<const double> x) const;

    nlohmann::json to_json() const;
    static EncoderHead from_json(const nlohmann::json& j);

private:
    Mlp body_;
    EncoderFamily family_;
    int latent_dim_;
    int components_;
};

struct GilboConfig {
    int batch_size = 64;
    std::int64_t max_steps = 40000;
    LrSchedule schedule{3e-3, 0.5, 10000};
    int eval_batches = 100;
    std::int64_t convergence_window = 1000;
    double convergence_tol = 1e-4;  // 0 trains to max_steps
    std::int64_t curve_every = 100;
    std::optional<EncoderFamily> family;  // default: mixture for box priors, Gaussian otherwise
    int components = 16;
    std::vector<int> hidden = {64, 64};
    Activation activation = Activation::relu;
    std::uint64_t seed = 0;

    void validate() const;
    EncoderFamily resolved_family(const Prior& prior) const;
};

struct CurvePoint {
    std::int64_t step;
    double objective;  // mean objective over the preceding curve_every steps
};

struct TrainResult {
    EncoderHead encoder;
    std::vector<CurvePoint> curve;
    std::vector<double> step_objectives;
    std::int64_t steps_run = 0;
    bool converged = false;
};

// Maximizes mean_batch [log e(z|x) - log p(z)] over encoder parameters with Adam.
// Training draws come from Rng::stream(seed, 1); initialization from stream 0.
TrainResult train_encoder(const Generator& gen, const Prior& prior, const GilboConfig& config);

struct GilboEstimate {
    double nats = 0.0;
    double bits = 0.0;
    double std_err = 0.0;
    std::int64_t n_samples = 0;
    std::int64_t steps_run = 0;
    bool converged = false;
    std::vector<CurvePoint> training_curve;
};

// Mean of log e(z|x) - log p(z) over eval_batches * batch_size fresh pairs.
GilboEstimate estimate(const Generator& gen, const Prior& prior, const Encoder& encoder, int eval_batches,
                       int batch_size, Rng& rng);

struct Measurement {
    GilboEstimate estimate;
    TrainResult training;
};

// train_encoder then estimate on Rng::stream(seed, 2), disjoint from training.
Measurement measure_gilbo(const Generator& gen, const Prior& prior, const GilboConfig& config);

struct Signposts {
    std::optional<double> log_C;
    std::optional<double> log_N;
    std::optional<double> H_X;

    // Violations of log_C <= log_N <= H_X; informational only.
    std::vector<std::string> warnings() const;
};

namespace band {
inline constexpr const char* kBelowLogC = "≤ log C";
inline constexpr const char* kLogCToLogN = "(log C, log N]";
inline constexpr const char* kLogNTo2LogN = "(log N, 2 log N]";
inline constexpr const char* k2LogNToHX = "(2 log N, H(X)]";
inline constexpr const char* kAboveHX = "> H(X)";
inline constexpr const char* kUnclassified = "unclassified";
} // namespace band

// Places a value in the signpost bands, skipping bands whose signposts are absent.
std::string annotate(const GilboEstimate& est, const Signposts& sp);
std::string annotate(double nats, const Signposts& sp);

nlohmann::json signposts_to_json(const Signposts& sp);

} // namespace gilbo
