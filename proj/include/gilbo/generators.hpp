#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"

#include "gilbo/dists.hpp"
#include "gilbo/nn.hpp"
#include "gilbo/rng.hpp"

namespace gilbo {

enum class GeneratorKind { sign, quantizer, float_cast, mlp_deterministic, gaussian_decoder };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(const std::string& s);

enum class PriorKind { uniform_box, standard_normal };

std::string to_string(PriorKind kind);
PriorKind prior_kind_from_string(const std::string& s);

// Elementwise sign with sign(0) = +1.
struct SignParams {};

// K equal cells on (-1, 1); output is the cell midpoint.
struct QuantizerParams {
    int levels = 2;

    int cell_index(double z) const;
    double midpoint(int cell) const;
};

// Round-to-nearest-even cast to IEEE single precision.
struct FloatCastParams {};

struct MlpParams {
    Mlp net;
};

struct GaussianDecoderParams {
    Mlp mean_net;
    Vec log_std;
};

using GeneratorParams = std::variant<SignParams, QuantizerParams, FloatCastParams, MlpParams, GaussianDecoderParams>;

struct GeneratedSample {
    Vec x;
    std::optional<double> log_px_given_z;  // gaussian_decoder only
};

// A latent-variable model p(z) p(x | z). Immutable after construction.
class Generator {
public:
    static Generator sign(int dim);
    static Generator quantizer(int dim, int levels);
    static Generator float_cast(int dim);
    static Generator mlp(Mlp net, PriorKind prior = PriorKind::uniform_box);
    static Generator gaussian_decoder(Mlp mean_net, Vec log_std, PriorKind prior = PriorKind::standard_normal);

    // x = 0 for every z: a zero-weight linear mlp_deterministic generator.
    static Generator constant(int latent_dim, int output_dim);
    // Glorot-initialized mlp_deterministic generator.
    static Generator random_mlp(int latent_dim, int output_dim, std::vector<int> hidden, Activation act,
                                std::uint64_t seed);

    GeneratorKind kind() const;
    int latent_dim() const { return latent_dim_; }
    int output_dim() const { return output_dim_; }
    bool deterministic() const { return kind() != GeneratorKind::gaussian_decoder; }
    PriorKind prior_kind() const { return prior_kind_; }
    Prior prior() const;
    const GeneratorParams& params() const { return params_; }

    // g(z) for deterministic kinds, the decoder mean for gaussian_decoder.
    Vec map(std::span<const double> z) const;

    // x ~ p(x | z). Throws SupportError for box-prior generators when z leaves (-1, 1)^d.
    GeneratedSample sample_x(std::span<const double> z, Rng& rng) const;

    // log p(x | z); only defined for gaussian_decoder.
    double log_likelihood(std::span<const double> x, std::span<const double> z) const;

    nlohmann::json to_json() const;
    static Generator from_json(const nlohmann::json& j);

private:
    Generator(int latent, int output, PriorKind prior, GeneratorParams params);
    void check_latent(std::span<const double> z) const;

    int latent_dim_;
    int output_dim_;
    PriorKind prior_kind_;
    GeneratorParams params_;
};

struct Pair {
    Vec z;
    Vec x;
};

// z ~ prior, x ~ p(x | z).
Pair draw_pair(const Generator& gen, const Prior& prior, Rng& rng);

// Generator descriptor JSON on disk; writes via temp file + rename.
void save_weights(const Generator& gen, const std::filesystem::path& path);
Generator load_weights(const std::filesystem::path& path);

// Parses JSON text, mapping syntax errors to ParseError("<origin>:<line>:<col>: ...").
nlohmann::json parse_json_text(const std::string& text, const std::string& origin);

// 8 isotropic Gaussians (std 0.2) on a radius-2 circle in 2-D.
std::vector<Vec> synthetic_mixture_dataset(std::size_t n = 4096, std::uint64_t seed = 20180101);

struct VaeConfig {
    int latent_dim = 2;
    std::vector<int> hidden = {32, 32};
    Activation activation = Activation::tanh;
    int batch_size = 64;
    std::int64_t steps = 4000;
    LrSchedule schedule{3e-3, 0.5, 2000};
    double min_log_std = -7.0;  // decoder noise floor
    std::uint64_t seed = 1;
};

struct VaeResult {
    Generator generator;
    std::vector<std::pair<std::int64_t, double>> elbo_curve;  // per-step batch ELBO
};

// Trains a Gaussian-decoder VAE by maximizing the reparameterized ELBO with a
// diagonal-Gaussian encoder and N(0, I) prior. Throws DivergedError on NaN.
VaeResult train_tiny_vae(const std::vector<Vec>& dataset, const VaeConfig& config);

} // namespace gilbo
