#include "gilbo/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gilbo/errors.hpp"

namespace gilbo {

namespace {

constexpr double kLn2 = std::numbers::ln2;

double sigmoid(double r) { return r >= 0.0 ? 1.0 / (1.0 + std::exp(-r)) : std::exp(r) / (1.0 + std::exp(r)); }

// Inverse of softplus for y > 0.
double softplus_inverse(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

// Mixture layout per dimension: [logits(K) | delta(K) | log_conc(K) | loc | log_width].
// Component means tile a learned window in logit space,
//   m_c = sigmoid(loc + w t_c + delta_c),  t_c evenly spaced on [-1, 1],  w = exp(log_width),
// and concentrations scale with the window, kappa_c = exp(log_conc_c - 2 log_width), so
// narrowing the window sharpens every component together.
// alpha = m kappa and beta = (1 - m) kappa, each floored at kBetaParamFloor.
constexpr double kMaxLogConcentration = 20.0;
constexpr double kMinLogWidth = -20.0;
constexpr double kMaxLogWidth = 5.0;

struct ComponentShape {
    double alpha;
    double beta;
    double m;
    double kappa;
    bool alpha_free;  // not held at the floor
    bool beta_free;
    bool kappa_free;  // not held at the concentration cap
};

struct MixtureShape {
    std::vector<ComponentShape> comp;
    double w;
    bool w_free;
};

double tile_position(int c, int k) { return k == 1 ? 0.0 : -1.0 + 2.0 * c / (k - 1); }

void mixture_shape(const double* r, int k, MixtureShape& out) {
    const double lw_raw = r[3 * k + 1];
    const double lw = std::clamp(lw_raw, kMinLogWidth, kMaxLogWidth);
    out.w = std::exp(lw);
    out.w_free = lw == lw_raw;
    out.comp.resize(static_cast<std::size_t>(k));
    const double loc = r[3 * k];
    for (int c = 0; c < k; ++c) {
        ComponentShape& s = out.comp[c];
        s.m = sigmoid(loc + out.w * tile_position(c, k) + r[k + c]);
        const double lk = r[2 * k + c] - 2.0 * lw;
        s.kappa_free = lk < kMaxLogConcentration;
        s.kappa = std::exp(std::min(lk, kMaxLogConcentration));
        const double a = s.m * s.kappa;
        const double b = (1.0 - s.m) * s.kappa;
        s.alpha_free = a > kBetaParamFloor;
        s.beta_free = b > kBetaParamFloor;
        s.alpha = std::max(a, kBetaParamFloor);
        s.beta = std::max(b, kBetaParamFloor);
    }
}

// Running mean / variance (Welford).
struct Moments {
    std::int64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double v) {
        ++n;
        const double d = v - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (v - mean);
    }
    double sample_variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
};

} // namespace

Vec Encoder::log_prob_batch(const Matrix& x, const Matrix& z) const {
    Vec out(static_cast<std::size_t>(x.rows));
    for (int i = 0; i < x.rows; ++i) out[i] = log_prob(x.row(i), z.row(i));
    return out;
}

std::string to_string(EncoderFamily f) {
    switch (f) {
        case EncoderFamily::remapped_beta: return "remapped_beta";
        case EncoderFamily::remapped_beta_mixture: return "remapped_beta_mixture";
        case EncoderFamily::diag_gaussian: return "diag_gaussian";
    }
    return "?";
}

EncoderFamily encoder_family_from_string(const std::string& s) {
    for (auto f : {EncoderFamily::remapped_beta, EncoderFamily::remapped_beta_mixture, EncoderFamily::diag_gaussian})
        if (to_string(f) == s) return f;
    throw ConfigError("unknown encoder family \"" + s + "\"");
}

double softplus(double r) { return r > 30.0 ? r : std::log1p(std::exp(r)); }

double positive_shape(double raw) { return std::max(softplus(raw), kBetaParamFloor); }

EncoderHead::EncoderHead(Mlp body, EncoderFamily family, int latent_dim, int components)
    : body_(std::move(body)), family_(family), latent_dim_(latent_dim), components_(components) {
    if (family_ != EncoderFamily::remapped_beta_mixture) components_ = 1;
    if (latent_dim_ <= 0 || components_ <= 0) throw ParameterError("EncoderHead: latent_dim and components must be positive");
    if (body_.output_dim() != raw_width(family_, latent_dim_, components_))
        throw ShapeError("EncoderHead: body output width " + std::to_string(body_.output_dim()) + " != " +
                         std::to_string(raw_width(family_, latent_dim_, components_)));
}

int EncoderHead::raw_width(EncoderFamily family, int latent_dim, int components) {
    return family == EncoderFamily::remapped_beta_mixture ? (3 * components + 2) * latent_dim : 2 * latent_dim;
}

EncoderHead EncoderHead::make(int input_dim, int latent_dim, EncoderFamily family, int components,
                              const std::vector<int>& hidden, Activation act, Rng& rng) {
    if (family != EncoderFamily::remapped_beta_mixture) components = 1;
    std::vector<int> dims{input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(raw_width(family, latent_dim, components));
    Mlp body = Mlp::glorot(std::move(dims), act, rng);

    auto bias = body.mutable_biases(body.num_layers() - 1);
    switch (family) {
        case EncoderFamily::remapped_beta:
            std::fill(bias.begin(), bias.end(), softplus_inverse(1.0));
            break;
        case EncoderFamily::remapped_beta_mixture: {
            // Window spans logits +-2 (u in 0.12..0.88) with overlapping components; for
            // K = 1 this is Beta(1, 1), the prior.
            const int k = components;
            const double log_width = std::log(2.0);
            const double concentration = k == 1 ? 2.0 : 2.0 * k;
            for (int d = 0; d < latent_dim; ++d) {
                auto* b = bias.data() + static_cast<std::size_t>((3 * k + 2) * d);
                for (int c = 0; c < k; ++c) {
                    b[c] = 0.0;
                    b[k + c] = 0.0;
                    b[2 * k + c] = std::log(concentration) + 2.0 * log_width;
                }
                b[3 * k] = 0.0;
                b[3 * k + 1] = log_width;
            }
            break;
        }
        case EncoderFamily::diag_gaussian:
            std::fill(bias.begin(), bias.end(), 0.0);
            break;
    }
    return EncoderHead(std::move(body), family, latent_dim, components);
}

double EncoderHead::log_prob_from_raw(std::span<const double> raw, std::span<const double> z,
                                      std::span<double> grad) const {
    if (static_cast<int>(z.size()) != latent_dim_) throw ShapeError("EncoderHead: z has wrong length");
    const bool want_grad = !grad.empty();
    const int d = latent_dim_;
    double lp = 0.0;
    switch (family_) {
        case EncoderFamily::remapped_beta: {
            for (int k = 0; k < d; ++k) {
                const double u = remap_to_unit(z[k]);
                const double a = positive_shape(raw[k]);
                const double b = positive_shape(raw[d + k]);
                lp += beta_log_pdf(u, a, b) - kLn2;
                if (want_grad) {
                    const auto g = beta_log_pdf_grad(u, a, b);
                    grad[k] = softplus(raw[k]) > kBetaParamFloor ? g.d_alpha * sigmoid(raw[k]) : 0.0;
                    grad[d + k] = softplus(raw[d + k]) > kBetaParamFloor ? g.d_beta * sigmoid(raw[d + k]) : 0.0;
                }
            }
            break;
        }
        case EncoderFamily::remapped_beta_mixture: {
            const int kc = components_;
            std::vector<double> comp(kc), logw(kc);
            MixtureShape ms;
            for (int k = 0; k < d; ++k) {
                const double u = remap_to_unit(z[k]);
                const double* r = raw.data() + static_cast<std::size_t>((3 * kc + 2) * k);
                mixture_shape(r, kc, ms);
                double wmax = -std::numeric_limits<double>::infinity();
                for (int c = 0; c < kc; ++c) wmax = std::max(wmax, r[c]);
                double wsum = 0.0;
                for (int c = 0; c < kc; ++c) wsum += std::exp(r[c] - wmax);
                const double log_norm = wmax + std::log(wsum);
                double cmax = -std::numeric_limits<double>::infinity();
                for (int c = 0; c < kc; ++c) {
                    logw[c] = r[c] - log_norm;
                    comp[c] = logw[c] + beta_log_pdf(u, ms.comp[c].alpha, ms.comp[c].beta);
                    cmax = std::max(cmax, comp[c]);
                }
                double csum = 0.0;
                for (int c = 0; c < kc; ++c) csum += std::exp(comp[c] - cmax);
                const double ld = cmax + std::log(csum);
                lp += ld - kLn2;
                if (want_grad) {
                    double* g = grad.data() + static_cast<std::size_t>((3 * kc + 2) * k);
                    double g_loc = 0.0;
                    double g_lw = 0.0;
                    for (int c = 0; c < kc; ++c) {
                        const ComponentShape& sh = ms.comp[c];
                        const double resp = std::exp(comp[c] - ld);
                        g[c] = resp - std::exp(logw[c]);
                        const auto bg = beta_log_pdf_grad(u, sh.alpha, sh.beta);
                        const double ga = sh.alpha_free ? resp * bg.d_alpha : 0.0;
                        const double gb = sh.beta_free ? resp * bg.d_beta : 0.0;
                        // d/d pre-sigmoid mean and d/d log kappa
                        const double g_pre = (ga - gb) * sh.kappa * sh.m * (1.0 - sh.m);
                        const double g_lk = sh.kappa_free ? (ga * sh.m + gb * (1.0 - sh.m)) * sh.kappa : 0.0;
                        g[kc + c] = g_pre;
                        g[2 * kc + c] = g_lk;
                        g_loc += g_pre;
                        g_lw += g_pre * ms.w * tile_position(c, kc) - 2.0 * g_lk;
                    }
                    g[3 * kc] = g_loc;
                    g[3 * kc + 1] = ms.w_free ? g_lw : 0.0;
                }
            }
            break;
        }
        case EncoderFamily::diag_gaussian: {
            for (int k = 0; k < d; ++k) {
                const double mean = raw[k];
                const double log_std = raw[d + k];
                lp += normal_log_pdf(z[k], mean, log_std);
                if (want_grad) {
                    const double inv_var = std::exp(-2.0 * log_std);
                    const double r = z[k] - mean;
                    grad[k] = r * inv_var;
                    grad[d + k] = -1.0 + r * r * inv_var;
                }
            }
            break;
        }
    }
    return lp;
}

Vec EncoderHead::sample_from_raw(std::span<const double> raw, Rng& rng) const {
    const int d = latent_dim_;
    switch (family_) {
        case EncoderFamily::remapped_beta: {
            Vec a(d), b(d);
            for (int k = 0; k < d; ++k) {
                a[k] = positive_shape(raw[k]);
                b[k] = positive_shape(raw[d + k]);
            }
            return RemappedBeta(std::move(a), std::move(b)).sample(rng);
        }
        case EncoderFamily::remapped_beta_mixture: {
            const int kc = components_;
            Vec z(d);
            for (int k = 0; k < d; ++k) {
                const double* r = raw.data() + static_cast<std::size_t>((3 * kc + 2) * k);
                const double wmax = *std::max_element(r, r + kc);
                double wsum = 0.0;
                for (int c = 0; c < kc; ++c) wsum += std::exp(r[c] - wmax);
                double pick = rng.uniform() * wsum;
                int chosen = kc - 1;
                for (int c = 0; c < kc; ++c) {
                    pick -= std::exp(r[c] - wmax);
                    if (pick <= 0.0) {
                        chosen = c;
                        break;
                    }
                }
                MixtureShape ms;
                mixture_shape(r, kc, ms);
                z[k] = RemappedBeta({ms.comp[chosen].alpha}, {ms.comp[chosen].beta}).sample(rng)[0];
            }
            return z;
        }
        case EncoderFamily::diag_gaussian:
            return DiagGaussian(Vec(raw.begin(), raw.begin() + d), Vec(raw.begin() + d, raw.begin() + 2 * d)).sample(rng);
    }
    return {};
}

double EncoderHead::log_prob(std::span<const double> x, std::span<const double> z) const {
    const Vec raw = body_.forward_one(x);
    return log_prob_from_raw(raw, z, {});
}

Vec EncoderHead::sample(std::span<const double> x, Rng& rng) const { return sample_from_raw(body_.forward_one(x), rng); }

Vec EncoderHead::log_prob_batch(const Matrix& x, const Matrix& z) const {
    const ForwardCache fwd = body_.forward(x);
    Vec out(static_cast<std::size_t>(x.rows));
    for (int i = 0; i < x.rows; ++i) out[i] = log_prob_from_raw(fwd.output().row(i), z.row(i), {});
    return out;
}

RemappedBeta EncoderHead::beta_at(std::span<const double> x) const {
    if (family_ != EncoderFamily::remapped_beta) throw UnsupportedKindError("beta_at: encoder is not remapped_beta");
    const Vec raw = body_.forward_one(x);
    Vec a(latent_dim_), b(latent_dim_);
    for (int k = 0; k < latent_dim_; ++k) {
        a[k] = positive_shape(raw[k]);
        b[k] = positive_shape(raw[latent_dim_ + k]);
    }
    return RemappedBeta(std::move(a), std::move(b));
}

DiagGaussian EncoderHead::gaussian_at(std::span<const double> x) const {
    if (family_ != EncoderFamily::diag_gaussian) throw UnsupportedKindError("gaussian_at: encoder is not diag_gaussian");
    const Vec raw = body_.forward_one(x);
    return DiagGaussian(Vec(raw.begin(), raw.begin() + latent_dim_), Vec(raw.begin() + latent_dim_, raw.end()));
}

nlohmann::json EncoderHead::to_json() const {
    return {{"family", to_string(family_)},
            {"latent_dim", latent_dim_},
            {"components", components_},
            {"body", body_.to_json()}};
}

EncoderHead EncoderHead::from_json(const nlohmann::json& j) {
    try {
        return EncoderHead(Mlp::from_json(j.at("body")), encoder_family_from_string(j.at("family").get<std::string>()),
                           j.at("latent_dim").get<int>(), j.value("components", 1));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("encoder: ") + e.what());
    }
}

void GilboConfig::validate() const {
    if (batch_size < 1) throw ConfigError("estimator: batch_size must be >= 1");
    if (max_steps < 1) throw ConfigError("estimator: max_steps must be >= 1");
    if (eval_batches < 30) throw ConfigError("estimator: eval_batches must be >= 30");
    if (convergence_window < 1) throw ConfigError("estimator: convergence_window must be >= 1");
    if (!(convergence_tol >= 0.0)) throw ConfigError("estimator: convergence_tol must be >= 0");
    if (curve_every < 1) throw ConfigError("estimator: curve_every must be >= 1");
    if (components < 1) throw ConfigError("estimator: components must be >= 1");
    for (int h : hidden)
        if (h < 1) throw ConfigError("estimator: hidden widths must be positive");
    schedule.validate();
}

EncoderFamily GilboConfig::resolved_family(const Prior& prior) const {
    if (family) return *family;
    return is_box(prior) ? EncoderFamily::remapped_beta_mixture : EncoderFamily::diag_gaussian;
}

TrainResult train_encoder(const Generator& gen, const Prior& prior, const GilboConfig& config) {
    config.validate();
    if (latent_dim(prior) != gen.latent_dim()) throw ShapeError("train_encoder: prior dim != generator latent_dim");
    const EncoderFamily family = config.resolved_family(prior);
    if (family != EncoderFamily::diag_gaussian && !is_box(prior))
        throw ConfigError("train_encoder: Beta encoders need a uniform box prior");

    Rng init = Rng::stream(config.seed, 0);
    Rng rng = Rng::stream(config.seed, 1);
    TrainResult result{EncoderHead::make(gen.output_dim(), gen.latent_dim(), family, config.components, config.hidden,
                                         config.activation, init),
                       {}, {}, 0, false};
    EncoderHead& enc = result.encoder;
    AdamState adam(enc.body().parameter_count());

    const int b = config.batch_size;
    const int dz = gen.latent_dim();
    const int width = enc.body().output_dim();
    Matrix x(b, gen.output_dim());
    Matrix z(b, dz);
    Matrix upstream(b, width);
    result.step_objectives.reserve(static_cast<std::size_t>(config.max_steps));

    double block_sum = 0.0;
    double window_sum = 0.0;
    std::vector<double> windows;
    for (std::int64_t step = 0; step < config.max_steps; ++step) {
        for (int i = 0; i < b; ++i) {
            const Pair p = draw_pair(gen, prior, rng);
            std::copy(p.z.begin(), p.z.end(), z.row(i).begin());
            std::copy(p.x.begin(), p.x.end(), x.row(i).begin());
        }
        const ForwardCache fwd = enc.body().forward(x);
        double objective = 0.0;
        for (int i = 0; i < b; ++i) {
            auto g = upstream.row(i);
            objective += enc.log_prob_from_raw(fwd.output().row(i), z.row(i), g) - log_prob(prior, z.row(i));
            // Minimize the negated mean objective.
            for (double& v : g) v *= -1.0 / b;
        }
        objective /= b;
        if (!std::isfinite(objective))
            throw DivergedError("train_encoder: non-finite objective after last finite step", step - 1);
        const MlpGradients grads = enc.body().backward(fwd, upstream);
        adam_step(enc.body(), grads.params, adam, config.schedule);

        result.step_objectives.push_back(objective);
        result.steps_run = step + 1;
        block_sum += objective;
        window_sum += objective;
        if (result.steps_run % config.curve_every == 0) {
            result.curve.push_back({result.steps_run, block_sum / static_cast<double>(config.curve_every)});
            block_sum = 0.0;
        }
        if (result.steps_run % config.convergence_window == 0) {
            windows.push_back(window_sum / static_cast<double>(config.convergence_window));
            window_sum = 0.0;
            const std::size_t n = windows.size();
            if (n >= 3) {
                auto rel = [](double prev, double cur) { return std::abs(cur - prev) / std::max(std::abs(prev), 1e-3); };
                if (rel(windows[n - 3], windows[n - 2]) < config.convergence_tol &&
                    rel(windows[n - 2], windows[n - 1]) < config.convergence_tol) {
                    result.converged = true;
                    break;
                }
            }
        }
    }
    return result;
}

GilboEstimate estimate(const Generator& gen, const Prior& prior, const Encoder& encoder, int eval_batches,
                       int batch_size, Rng& rng) {
    if (eval_batches < 1 || batch_size < 1) throw ConfigError("estimate: eval_batches and batch_size must be >= 1");
    if (encoder.latent_dim() != gen.latent_dim()) throw ShapeError("estimate: encoder latent_dim mismatch");
    Moments mom;
    Matrix x(batch_size, gen.output_dim());
    Matrix z(batch_size, gen.latent_dim());
    for (int batch = 0; batch < eval_batches; ++batch) {
        for (int i = 0; i < batch_size; ++i) {
            const Pair p = draw_pair(gen, prior, rng);
            std::copy(p.z.begin(), p.z.end(), z.row(i).begin());
            std::copy(p.x.begin(), p.x.end(), x.row(i).begin());
        }
        const Vec lp = encoder.log_prob_batch(x, z);
        for (int i = 0; i < batch_size; ++i) mom.add(lp[i] - log_prob(prior, z.row(i)));
    }
    GilboEstimate est;
    est.nats = mom.mean;
    est.bits = mom.mean / kLn2;
    est.n_samples = mom.n;
    est.std_err = std::sqrt(mom.sample_variance() / static_cast<double>(mom.n));
    return est;
}

Measurement measure_gilbo(const Generator& gen, const Prior& prior, const GilboConfig& config) {
    TrainResult trained = train_encoder(gen, prior, config);
    Rng eval = Rng::stream(config.seed, 2);
    GilboEstimate est = estimate(gen, prior, trained.encoder, config.eval_batches, config.batch_size, eval);
    est.steps_run = trained.steps_run;
    est.converged = trained.converged;
    est.training_curve = trained.curve;
    return {std::move(est), std::move(trained)};
}

std::vector<std::string> Signposts::warnings() const {
    std::vector<std::string> w;
    if (log_C && log_N && *log_C > *log_N) w.push_back("log_C exceeds log_N");
    if (log_N && H_X && *log_N > *H_X) w.push_back("log_N exceeds H_X");
    if (log_C && H_X && *log_C > *H_X) w.push_back("log_C exceeds H_X");
    return w;
}

std::string annotate(double nats, const Signposts& sp) {
    struct Edge {
        double value;
        const char* name;
    };
    std::vector<Edge> edges;
    if (sp.log_C) edges.push_back({*sp.log_C, "log C"});
    if (sp.log_N) {
        edges.push_back({*sp.log_N, "log N"});
        edges.push_back({2.0 * *sp.log_N, "2 log N"});
    }
    if (sp.H_X) edges.push_back({*sp.H_X, "H(X)"});
    if (edges.empty()) return band::kUnclassified;

    // Absent signposts drop out, merging their neighbouring bands.
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (nats <= edges[i].value) {
            if (i == 0) return std::string("≤ ") + edges[i].name;
            return std::string("(") + edges[i - 1].name + ", " + edges[i].name + "]";
        }
    }
    return std::string("> ") + edges.back().name;
}

std::string annotate(const GilboEstimate& est, const Signposts& sp) { return annotate(est.nats, sp); }

nlohmann::json signposts_to_json(const Signposts& sp) {
    nlohmann::json j = nlohmann::json::object();
    if (sp.log_C) j["log_C"] = *sp.log_C;
    if (sp.log_N) j["log_N"] = *sp.log_N;
    if (sp.H_X) j["H_X"] = *sp.H_X;
    return j;
}

} // namespace gilbo
