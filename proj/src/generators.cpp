#include "gilbo/generators.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gilbo/errors.hpp"
#include "gilbo/io.hpp"

namespace gilbo {

namespace {


template <class... Ts>
struct Overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

} // namespace

std::string to_string(GeneratorKind kind) {
    switch (kind) {
        case GeneratorKind::sign: return "sign";
        case GeneratorKind::quantizer: return "quantizer";
        case GeneratorKind::float_cast: return "float_cast";
        case GeneratorKind::mlp_deterministic: return "mlp_deterministic";
        case GeneratorKind::gaussian_decoder: return "gaussian_decoder";
    }
    return "?";
}

GeneratorKind generator_kind_from_string(const std::string& s) {
    for (auto k : {GeneratorKind::sign, GeneratorKind::quantizer, GeneratorKind::float_cast,
                   GeneratorKind::mlp_deterministic, GeneratorKind::gaussian_decoder})
        if (to_string(k) == s) return k;
    throw UnsupportedKindError("unsupported generator kind \"" + s + "\"");
}

std::string to_string(PriorKind kind) { return kind == PriorKind::uniform_box ? "uniform_box" : "standard_normal"; }

PriorKind prior_kind_from_string(const std::string& s) {
    if (s == "uniform_box") return PriorKind::uniform_box;
    if (s == "standard_normal") return PriorKind::standard_normal;
    throw UnsupportedKindError("unsupported prior \"" + s + "\"");
}

int QuantizerParams::cell_index(double z) const {
    const int i = static_cast<int>(std::floor(0.5 * (z + 1.0) * levels));
    return std::clamp(i, 0, levels - 1);
}

double QuantizerParams::midpoint(int cell) const { return -1.0 + (cell + 0.5) * (2.0 / levels); }

Generator::Generator(int latent, int output, PriorKind prior, GeneratorParams params)
    : latent_dim_(latent), output_dim_(output), prior_kind_(prior), params_(std::move(params)) {
    if (latent <= 0 || output <= 0) throw ParameterError("generator dimensions must be positive");
}

Generator Generator::sign(int dim) { return Generator(dim, dim, PriorKind::uniform_box, SignParams{}); }

Generator Generator::quantizer(int dim, int levels) {
    if (levels < 2) throw ParameterError("quantizer: levels must be >= 2");
    return Generator(dim, dim, PriorKind::uniform_box, QuantizerParams{levels});
}

Generator Generator::float_cast(int dim) { return Generator(dim, dim, PriorKind::uniform_box, FloatCastParams{}); }

Generator Generator::mlp(Mlp net, PriorKind prior) {
    const int in = net.input_dim();
    const int out = net.output_dim();
    return Generator(in, out, prior, MlpParams{std::move(net)});
}

Generator Generator::gaussian_decoder(Mlp mean_net, Vec log_std, PriorKind prior) {
    if (static_cast<int>(log_std.size()) != mean_net.output_dim())
        throw ShapeError("gaussian_decoder: log_std length must equal output_dim");
    for (double s : log_std)
        if (!std::isfinite(s)) throw ParameterError("gaussian_decoder: log_std must be finite");
    const int in = mean_net.input_dim();
    const int out = mean_net.output_dim();
    return Generator(in, out, prior, GaussianDecoderParams{std::move(mean_net), std::move(log_std)});
}

Generator Generator::constant(int latent_dim, int output_dim) {
    return mlp(Mlp({latent_dim, output_dim}, Activation::tanh));
}

Generator Generator::random_mlp(int latent_dim, int output_dim, std::vector<int> hidden, Activation act,
                                std::uint64_t seed) {
    std::vector<int> dims{latent_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output_dim);
    Rng rng(seed);
    return mlp(Mlp::glorot(std::move(dims), act, rng));
}

GeneratorKind Generator::kind() const {
    return std::visit(Overloaded{[](const SignParams&) { return GeneratorKind::sign; },
                                 [](const QuantizerParams&) { return GeneratorKind::quantizer; },
                                 [](const FloatCastParams&) { return GeneratorKind::float_cast; },
                                 [](const MlpParams&) { return GeneratorKind::mlp_deterministic; },
                                 [](const GaussianDecoderParams&) { return GeneratorKind::gaussian_decoder; }},
                      params_);
}

Prior Generator::prior() const {
    if (prior_kind_ == PriorKind::uniform_box) return UniformBoxPrior(latent_dim_);
    return StandardNormalPrior(latent_dim_);
}

void Generator::check_latent(std::span<const double> z) const {
    if (static_cast<int>(z.size()) != latent_dim_)
        throw ShapeError("generator: latent of length " + std::to_string(z.size()) + ", expected " +
                         std::to_string(latent_dim_));
    if (prior_kind_ == PriorKind::uniform_box && !UniformBoxPrior(latent_dim_).contains(z))
        throw SupportError("generator: z outside (-1, 1)^d");
}

Vec Generator::map(std::span<const double> z) const {
    check_latent(z);
    return std::visit(Overloaded{[&](const SignParams&) {
                                     Vec x(z.begin(), z.end());
                                     for (double& v : x) v = v < 0.0 ? -1.0 : 1.0;
                                     return x;
                                 },
                                 [&](const QuantizerParams& q) {
                                     Vec x(z.size());
                                     for (std::size_t i = 0; i < z.size(); ++i) x[i] = q.midpoint(q.cell_index(z[i]));
                                     return x;
                                 },
                                 [&](const FloatCastParams&) {
                                     Vec x(z.size());
                                     for (std::size_t i = 0; i < z.size(); ++i)
                                         x[i] = static_cast<double>(static_cast<float>(z[i]));
                                     return x;
                                 },
                                 [&](const MlpParams& p) { return p.net.forward_one(z); },
                                 [&](const GaussianDecoderParams& p) { return p.mean_net.forward_one(z); }},
                      params_);
}

GeneratedSample Generator::sample_x(std::span<const double> z, Rng& rng) const {
    GeneratedSample s{map(z), std::nullopt};
    if (const auto* p = std::get_if<GaussianDecoderParams>(&params_)) {
        double lp = 0.0;
        for (std::size_t j = 0; j < s.x.size(); ++j) {
            const double eps = rng.normal();
            s.x[j] += std::exp(p->log_std[j]) * eps;
            lp += -p->log_std[j] - kHalfLog2Pi - 0.5 * eps * eps;
        }
        s.log_px_given_z = lp;
    }
    return s;
}

double Generator::log_likelihood(std::span<const double> x, std::span<const double> z) const {
    const auto* p = std::get_if<GaussianDecoderParams>(&params_);
    if (!p) throw UnsupportedKindError("log_likelihood is only defined for gaussian_decoder");
    if (static_cast<int>(x.size()) != output_dim_) throw ShapeError("log_likelihood: x has wrong length");
    const Vec mean = map(z);
    double lp = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) lp += normal_log_pdf(x[j], mean[j], p->log_std[j]);
    return lp;
}

nlohmann::json Generator::to_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind());
    j["latent_dim"] = latent_dim_;
    j["output_dim"] = output_dim_;
    j["prior"] = to_string(prior_kind_);
    j["params"] = std::visit(Overloaded{[](const SignParams&) { return nlohmann::json::object(); },
                                        [](const QuantizerParams& q) { return nlohmann::json{{"levels", q.levels}}; },
                                        [](const FloatCastParams&) { return nlohmann::json::object(); },
                                        [](const MlpParams& p) { return nlohmann::json{{"net", p.net.to_json()}}; },
                                        [](const GaussianDecoderParams& p) {
                                            return nlohmann::json{{"mean_net", p.mean_net.to_json()},
                                                                  {"log_std", p.log_std}};
                                        }},
                             params_);
    return j;
}

Generator Generator::from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw ParseError("generator descriptor: expected a JSON object");
        if (!j.contains("kind")) throw ParseError("generator descriptor: missing key \"kind\"");
        const GeneratorKind kind = generator_kind_from_string(j.at("kind").get<std::string>());
        const nlohmann::json params = j.value("params", nlohmann::json::object());
        auto dim = [&](const char* key) {
            if (!j.contains(key)) throw ParseError(std::string("generator descriptor: missing key \"") + key + "\"");
            return j.at(key).get<int>();
        };
        auto prior_or = [&](PriorKind def) {
            return j.contains("prior") ? prior_kind_from_string(j.at("prior").get<std::string>()) : def;
        };
        Generator gen = [&]() -> Generator {
            switch (kind) {
                case GeneratorKind::sign: return sign(dim("latent_dim"));
                case GeneratorKind::quantizer:
                    if (!params.contains("levels")) throw ParseError("quantizer: missing params.levels");
                    return quantizer(dim("latent_dim"), params.at("levels").get<int>());
                case GeneratorKind::float_cast: return float_cast(dim("latent_dim"));
                case GeneratorKind::mlp_deterministic:
                    if (!params.contains("net")) throw ParseError("mlp_deterministic: missing params.net");
                    return mlp(Mlp::from_json(params.at("net")), prior_or(PriorKind::uniform_box));
                case GeneratorKind::gaussian_decoder:
                    if (!params.contains("mean_net") || !params.contains("log_std"))
                        throw ParseError("gaussian_decoder: params need mean_net and log_std");
                    return gaussian_decoder(Mlp::from_json(params.at("mean_net")),
                                            params.at("log_std").get<Vec>(), prior_or(PriorKind::standard_normal));
            }
            throw UnsupportedKindError("unsupported generator kind");
        }();
        if (j.contains("latent_dim") && j.at("latent_dim").get<int>() != gen.latent_dim())
            throw ParseError("generator descriptor: latent_dim disagrees with params");
        if (j.contains("output_dim") && j.at("output_dim").get<int>() != gen.output_dim())
            throw ParseError("generator descriptor: output_dim disagrees with params");
        if (kind != GeneratorKind::mlp_deterministic && kind != GeneratorKind::gaussian_decoder && j.contains("prior") &&
            prior_kind_from_string(j.at("prior").get<std::string>()) != PriorKind::uniform_box)
            throw ParseError("generator descriptor: " + to_string(kind) + " requires the uniform_box prior");
        return gen;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("generator descriptor: ") + e.what());
    } catch (const ShapeError& e) {
        throw ParseError(std::string("generator descriptor: ") + e.what());
    } catch (const ParameterError& e) {
        throw ParseError(std::string("generator descriptor: ") + e.what());
    }
}

Pair draw_pair(const Generator& gen, const Prior& prior, Rng& rng) {
    if (latent_dim(prior) != gen.latent_dim()) throw ShapeError("draw_pair: prior dim != generator latent_dim");
    Pair p;
    p.z = sample(prior, rng);
    p.x = gen.sample_x(p.z, rng).x;
    return p;
}

nlohmann::json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        std::size_t line = 1, col = 1;
        const std::size_t stop = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < stop; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ParseError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
    }
}

void save_weights(const Generator& gen, const std::filesystem::path& path) {
    write_file_atomic(path, gen.to_json().dump(1) + "\n");
}

Generator load_weights(const std::filesystem::path& path) {
    return Generator::from_json(parse_json_text(read_file(path), path.string()));
}

std::vector<Vec> synthetic_mixture_dataset(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Vec> data;
    data.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(rng.index(8)) / 8.0;
        data.push_back({2.0 * std::cos(angle) + 0.2 * rng.normal(), 2.0 * std::sin(angle) + 0.2 * rng.normal()});
    }
    return data;
}

VaeResult train_tiny_vae(const std::vector<Vec>& dataset, const VaeConfig& config) {
    if (dataset.empty()) throw ValidationError("train_tiny_vae: dataset is empty");
    if (config.latent_dim < 1 || config.latent_dim > 4) throw ConfigError("train_tiny_vae: latent_dim must be in [1, 4]");
    if (config.batch_size < 1 || config.steps < 1) throw ConfigError("train_tiny_vae: batch_size and steps must be >= 1");
    config.schedule.validate();
    const int d = config.latent_dim;
    const int m = static_cast<int>(dataset.front().size());
    for (const auto& x : dataset)
        if (static_cast<int>(x.size()) != m) throw ValidationError("train_tiny_vae: ragged dataset");

    Rng init = Rng::stream(config.seed, 0);
    Rng rng = Rng::stream(config.seed, 1);
    auto dims = [&](int in, int out) {
        std::vector<int> v{in};
        v.insert(v.end(), config.hidden.begin(), config.hidden.end());
        v.push_back(out);
        return v;
    };
    Mlp encoder = Mlp::glorot(dims(m, 2 * d), config.activation, init);
    Mlp decoder = Mlp::glorot(dims(d, m), config.activation, init);
    Vec log_std(m, 0.0);
    AdamState enc_state(encoder.parameter_count());
    AdamState dec_state(decoder.parameter_count());
    AdamState std_state(log_std.size());

    VaeResult result{Generator::constant(d, m), {}};
    result.elbo_curve.reserve(static_cast<std::size_t>(config.steps));
    const int b = config.batch_size;
    const double inv_b = 1.0 / b;

    for (std::int64_t step = 0; step < config.steps; ++step) {
        Matrix x(b, m);
        for (int i = 0; i < b; ++i) {
            const auto& src = dataset[rng.index(dataset.size())];
            std::copy(src.begin(), src.end(), x.row(i).begin());
        }
        const ForwardCache enc = encoder.forward(x);
        const Matrix& q = enc.output();  // [mu | log_sigma]
        Matrix eps(b, d), z(b, d);
        for (int i = 0; i < b; ++i)
            for (int k = 0; k < d; ++k) {
                eps(i, k) = rng.normal();
                z(i, k) = q(i, k) + std::exp(q(i, d + k)) * eps(i, k);
            }
        const ForwardCache dec = decoder.forward(z);
        const Matrix& mean = dec.output();

        // Gradients of the loss L = -mean ELBO.
        Matrix g_mean(b, m);
        Vec g_log_std(m, 0.0);
        double elbo = 0.0;
        for (int i = 0; i < b; ++i) {
            for (int j = 0; j < m; ++j) {
                const double inv_var = std::exp(-2.0 * log_std[j]);
                const double r = x(i, j) - mean(i, j);
                elbo += -log_std[j] - kHalfLog2Pi - 0.5 * r * r * inv_var;
                g_mean(i, j) = -r * inv_var * inv_b;
                g_log_std[j] += (1.0 - r * r * inv_var) * inv_b;
            }
            for (int k = 0; k < d; ++k) {
                const double mu = q(i, k);
                const double ls = q(i, d + k);
                elbo -= 0.5 * (mu * mu + std::exp(2.0 * ls) - 1.0) - ls;
            }
        }
        elbo *= inv_b;
        if (!std::isfinite(elbo)) throw DivergedError("train_tiny_vae: non-finite ELBO", step);
        result.elbo_curve.emplace_back(step, elbo);

        const MlpGradients dg = decoder.backward(dec, g_mean);
        Matrix g_q(b, 2 * d);
        for (int i = 0; i < b; ++i)
            for (int k = 0; k < d; ++k) {
                const double mu = q(i, k);
                const double sigma = std::exp(q(i, d + k));
                g_q(i, k) = dg.input(i, k) + mu * inv_b;
                g_q(i, d + k) = dg.input(i, k) * sigma * eps(i, k) + (sigma * sigma - 1.0) * inv_b;
            }
        const MlpGradients eg = encoder.backward(enc, g_q);

        adam_step(decoder, dg.params, dec_state, config.schedule);
        adam_step(encoder, eg.params, enc_state, config.schedule);
        adam_step(std::span<double>(log_std), g_log_std, std_state, config.schedule);
        for (double& s : log_std) s = std::max(s, config.min_log_std);
    }
    result.generator = Generator::gaussian_decoder(std::move(decoder), std::move(log_std));
    return result;
}

} // namespace gilbo
