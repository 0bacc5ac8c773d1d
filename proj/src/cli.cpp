#include "gilbo/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "gilbo/errors.hpp"
#include "gilbo/io.hpp"
#include "gilbo/oracle.hpp"

namespace gilbo {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Zoo
// ---------------------------------------------------------------------------

std::vector<ZooEntry> zoo_entries() {
    return {
        {"sign1", "elementwise sign, latent dim 1 (I = ln 2)"},
        {"sign2", "elementwise sign, latent dim 2"},
        {"sign4", "elementwise sign, latent dim 4"},
        {"quantizer2", "2-level uniform quantizer, dim 1"},
        {"quantizer4", "4-level uniform quantizer, dim 1"},
        {"quantizer16", "16-level uniform quantizer, dim 1 (I = ln 16)"},
        {"float_cast1", "cast to float32, dim 1"},
        {"constant", "x = 0 for every z (I = 0)"},
        {"mlp_a", "random tanh MLP 2 -> 16 -> 16 -> 4, seed 7"},
        {"mlp_b", "random tanh MLP 2 -> 16 -> 16 -> 4, seed 8"},
        {"mlp_c", "random tanh MLP 3 -> 24 -> 24 -> 6, seed 9"},
    };
}

Generator zoo_generator(const std::string& name) {
    if (name == "sign1") return Generator::sign(1);
    if (name == "sign2") return Generator::sign(2);
    if (name == "sign4") return Generator::sign(4);
    if (name == "quantizer2") return Generator::quantizer(1, 2);
    if (name == "quantizer4") return Generator::quantizer(1, 4);
    if (name == "quantizer16") return Generator::quantizer(1, 16);
    if (name == "float_cast1") return Generator::float_cast(1);
    if (name == "constant") return Generator::constant(1, 1);
    if (name == "mlp_a") return Generator::random_mlp(2, 4, {16, 16}, Activation::tanh, 7);
    if (name == "mlp_b") return Generator::random_mlp(2, 4, {16, 16}, Activation::tanh, 8);
    if (name == "mlp_c") return Generator::random_mlp(3, 6, {24, 24}, Activation::tanh, 9);
    throw ConfigError("unknown zoo generator \"" + name + "\"");
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

// Reads keys from one JSON object and rejects any it was not asked about.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "expected a JSON object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    template <class T>
    void read(const std::string& key, T& target) {
        if (!has(key)) return;
        try {
            target = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where(key) + e.what());
        }
    }

    template <class T>
    void read_optional(const std::string& key, std::optional<T>& target) {
        if (!has(key) || j_.at(key).is_null()) return;
        T v{};
        read(key, v);
        target = v;
    }

    Section child(const std::string& key) { return Section(raw(key), join(key)); }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + "unknown key");
    }

    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string where(const std::string& key = "") const {
        const std::string p = key.empty() ? path_ : join(key);
        return p.empty() ? "config: " : "config: " + p + ": ";
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void parse_schedule(Section s, LrSchedule& sched) {
    s.read("initial_lr", sched.initial_lr);
    s.read("decay_factor", sched.decay_factor);
    s.read("decay_every", sched.decay_every);
    s.finish();
}

Activation parse_activation(Section& s, const std::string& key, Activation def) {
    if (!s.has(key)) return def;
    std::string name;
    s.read(key, name);
    try {
        return activation_from_string(name);
    } catch (const Error& e) {
        throw ConfigError(s.where(key) + e.what());
    }
}

void parse_estimator(Section s, GilboConfig& c) {
    s.read("batch_size", c.batch_size);
    s.read("max_steps", c.max_steps);
    if (s.has("schedule")) parse_schedule(s.child("schedule"), c.schedule);
    s.read("eval_batches", c.eval_batches);
    s.read("convergence_window", c.convergence_window);
    s.read("convergence_tol", c.convergence_tol);
    s.read("curve_every", c.curve_every);
    if (s.has("family")) {
        std::string name;
        s.read("family", name);
        try {
            c.family = encoder_family_from_string(name);
        } catch (const Error& e) {
            throw ConfigError(s.where("family") + e.what());
        }
    }
    s.read("components", c.components);
    s.read("hidden", c.hidden);
    c.activation = parse_activation(s, "activation", c.activation);
    s.finish();
    try {
        c.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

void parse_diagnostics(Section s, DiagnosticsConfig& d) {
    if (s.has("sbc")) {
        Section sb = s.child("sbc");
        sb.read("n_cycles", d.sbc.n_cycles);
        sb.read("draws_per_cycle", d.sbc.draws_per_cycle);
        sb.read("n_bins", d.sbc.n_bins);
        sb.finish();
    }
    s.read("repro_k", d.repro_k);
    s.read("tight_n", d.tight_n);
    if (s.has("inversion")) {
        Section iv = s.child("inversion");
        iv.read("max_steps", d.inversion.max_steps);
        if (iv.has("schedule")) parse_schedule(iv.child("schedule"), d.inversion.schedule);
        iv.read("restarts", d.inversion.restarts);
        iv.read("failure_threshold", d.inversion.failure_threshold);
        iv.read("stop_residual", d.inversion.stop_residual);
        iv.finish();
        d.inversion.validate();
    }
    if (s.has("consistency")) {
        Section cs = s.child("consistency");
        cs.read("n_samples", d.consistency.n_samples);
        cs.read("n_resamples", d.consistency.n_resamples);
        cs.finish();
    }
    s.finish();
}

void parse_zoo(Section s, ZooTrainConfig& z) {
    if (s.has("vae")) {
        Section v = s.child("vae");
        v.read("latent_dim", z.vae.latent_dim);
        v.read("hidden", z.vae.hidden);
        z.vae.activation = parse_activation(v, "activation", z.vae.activation);
        v.read("batch_size", z.vae.batch_size);
        v.read("steps", z.vae.steps);
        if (v.has("schedule")) parse_schedule(v.child("schedule"), z.vae.schedule);
        v.read("min_log_std", z.vae.min_log_std);
        v.finish();
    }
    s.read("dataset_size", z.dataset_size);
    s.read("out_file", z.out_file);
    s.finish();
}

void check_net_keys(const json& net, const std::string& path) {
    Section s(net, path);
    for (const char* k : {"layer_dims", "activation", "weights", "biases"}) s.has(k);
    s.finish();
}

// Rejects unknown keys in a generator descriptor before handing it to Generator::from_json.
void check_descriptor_keys(const json& d, const std::string& path) {
    Section s(d, path);
    for (const char* k : {"kind", "latent_dim", "output_dim", "prior"}) s.has(k);
    if (s.has("params")) {
        Section p = s.child("params");
        for (const char* k : {"levels", "net", "mean_net", "log_std"}) p.has(k);
        p.finish();
        const json& params = d.at("params");
        for (const char* k : {"net", "mean_net"})
            if (params.contains(k)) check_net_keys(params.at(k), s.join("params") + "." + k);
    }
    s.finish();
}

Generator parse_generator(const json& g, const std::filesystem::path& base_dir) {
    try {
        if (g.is_string()) {
            std::filesystem::path p = g.get<std::string>();
            if (p.is_relative()) p = base_dir / p;
            const json d = parse_json_text(read_file(p), p.string());
            check_descriptor_keys(d, "generator(" + p.string() + ")");
            return Generator::from_json(d);
        }
        if (g.is_object() && g.contains("zoo")) {
            Section s(g, "generator");
            std::string name;
            s.read("zoo", name);
            s.finish();
            return zoo_generator(name);
        }
        check_descriptor_keys(g, "generator");
        return Generator::from_json(g);
    } catch (const ParseError& e) {
        throw ConfigError(std::string("config: generator: ") + e.what());
    }
}

} // namespace

void RunConfig::apply_seed(std::uint64_t s) {
    seed = s;
    estimator.seed = s;
    diagnostics.sbc.seed = s;
    diagnostics.inversion.seed = s;
    zoo.vae.seed = s;
}

const Generator& RunConfig::require_generator() const {
    if (!generator) throw ConfigError("config: missing key \"generator\"");
    return *generator;
}

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
    RunConfig cfg;
    Section s(j, "");
    if (s.has("generator")) cfg.generator = parse_generator(s.raw("generator"), base_dir);
    if (s.has("estimator")) parse_estimator(s.child("estimator"), cfg.estimator);
    if (s.has("diagnostics")) parse_diagnostics(s.child("diagnostics"), cfg.diagnostics);
    if (s.has("signposts")) {
        Section sp = s.child("signposts");
        sp.read_optional("log_C", cfg.signposts.log_C);
        sp.read_optional("log_N", cfg.signposts.log_N);
        sp.read_optional("H_X", cfg.signposts.H_X);
        sp.finish();
    }
    s.read_optional("output_dir", cfg.output_dir);
    std::uint64_t seed = 0;
    s.read("seed", seed);
    s.read("workers", cfg.workers);
    if (cfg.workers < 0) throw ConfigError("config: workers: must be >= 0");
    if (s.has("zoo")) parse_zoo(s.child("zoo"), cfg.zoo);
    s.finish();
    cfg.apply_seed(seed);
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    json j;
    try {
        j = parse_json_text(text, path.string());
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    }
    return parse_run_config(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace {

std::string csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::ostringstream os;
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << '\n';
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
        os << '\n';
    }
    return os.str();
}

std::string fmt6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

json num(double v) { return std::isfinite(v) ? json(round9(v)) : json(nullptr); }

json num(const std::optional<double>& v) { return v ? num(*v) : json(nullptr); }

json signposts_json(const Signposts& sp) {
    json j = json::object();
    j["log_C"] = num(sp.log_C);
    j["log_N"] = num(sp.log_N);
    j["H_X"] = num(sp.H_X);
    return j;
}

void write_out(const CommandContext& ctx, const std::string& name, const std::string& content) {
    std::filesystem::create_directories(ctx.out_dir);
    write_file_atomic(ctx.out_dir / name, content);
}

void write_consistency(const RunConfig& cfg, const Generator& gen, const Encoder& enc, const CommandContext& ctx) {
    const ConsistencyConfig& cc = cfg.diagnostics.consistency;
    if (cc.n_samples <= 0) return;
    Rng rng = Rng::stream(cfg.seed, 6);
    const auto tuples = consistency_tuples(gen, gen.prior(), enc, cc.n_samples, cc.n_resamples, rng);
    std::vector<std::string> header = {"sample", "draw"};
    auto cols = [&](const char* prefix, int n) {
        for (int i = 0; i < n; ++i) header.push_back(prefix + std::to_string(i));
    };
    cols("z", gen.latent_dim());
    cols("x", gen.output_dim());
    cols("z_resample", gen.latent_dim());
    cols("x_reconstruction", gen.output_dim());
    std::vector<std::vector<std::string>> rows;
    rows.reserve(tuples.size());
    for (const auto& t : tuples) {
        std::vector<std::string> r = {std::to_string(t.sample), std::to_string(t.draw)};
        for (const Vec* v : {&t.z, &t.x, &t.z_resample, &t.x_reconstruction})
            for (double e : *v) r.push_back(fmt9(e));
        rows.push_back(std::move(r));
    }
    write_out(ctx, "consistency_tuples.csv", csv(header, rows));
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

int cmd_estimate(const RunConfig& cfg, const CommandContext& ctx) {
    const Generator& gen = cfg.require_generator();
    const Measurement m = measure_gilbo(gen, gen.prior(), cfg.estimator);
    const GilboEstimate& e = m.estimate;
    const std::string band = annotate(e, cfg.signposts);

    json r = json::object();
    r["command"] = "estimate";
    r["generator"] = to_string(gen.kind());
    r["nats"] = num(e.nats);
    r["bits"] = num(e.bits);
    r["std_err"] = num(e.std_err);
    r["n_samples"] = e.n_samples;
    r["steps_run"] = e.steps_run;
    r["converged"] = e.converged;
    r["band"] = band;
    r["signposts"] = signposts_json(cfg.signposts);
    r["warnings"] = cfg.signposts.warnings();
    r["oracle_nats"] = num(oracle_mi(gen));
    r["seed"] = cfg.seed;

    std::vector<std::vector<std::string>> rows;
    rows.reserve(e.training_curve.size());
    for (const auto& p : e.training_curve) rows.push_back({std::to_string(p.step), fmt9(p.objective)});
    write_out(ctx, "curve.csv", csv({"step", "objective"}, rows));
    write_consistency(cfg, gen, m.training.encoder, ctx);
    write_out(ctx, "report.json", dump_json(r));

    ctx.out << "GILBO " << fmt6(e.nats) << " nats (" << fmt6(e.bits) << " bits) +- " << fmt6(e.std_err)
            << " nats, band: " << band << (e.converged ? "" : " [not converged]") << '\n';
    for (const auto& w : cfg.signposts.warnings()) ctx.err << "warning: " << w << '\n';
    return kExitOk;
}

int cmd_sbc(const RunConfig& cfg, const CommandContext& ctx) {
    const Generator& gen = cfg.require_generator();
    const TrainResult trained = train_encoder(gen, gen.prior(), cfg.estimator);
    const RankHistogram h = sbc(gen, gen.prior(), trained.encoder, cfg.diagnostics.sbc);

    std::vector<std::vector<std::string>> rows;
    for (int b = 0; b < h.n_bins; ++b)
        rows.push_back({std::to_string(b), std::to_string(h.counts[b]), std::to_string(h.ci_low),
                        std::to_string(h.ci_high)});
    write_out(ctx, "sbc.csv", csv({"bin_index", "count", "ci_low", "ci_high"}, rows));
    std::vector<std::vector<std::string>> dim_rows;
    for (int d = 0; d < h.latent_dim; ++d)
        for (int b = 0; b < h.n_bins; ++b)
            dim_rows.push_back({std::to_string(d), std::to_string(b), std::to_string(h.per_dim[d][b])});
    write_out(ctx, "sbc_per_dim.csv", csv({"dim", "bin_index", "count"}, dim_rows));

    json r = json::object();
    r["command"] = "sbc";
    r["generator"] = to_string(gen.kind());
    r["n_cycles"] = h.n_cycles;
    r["draws_per_cycle"] = h.draws_per_cycle;
    r["n_bins"] = h.n_bins;
    r["empty"] = h.empty;
    if (!h.empty) {
        const CapShape cap = detect_cap_shape(h);
        const double chi = chi_square_statistic(h);
        const bool uniform = chi_square_uniform_passes(h, 0.01);
        const double inside = fraction_within_band(h);
        r["chi_square"] = num(chi);
        r["chi_square_passes_1pct"] = uniform;
        r["fraction_within_band"] = num(inside);
        r["cap_shape"] = cap.detected();
        ctx.out << "SBC: chi-square " << fmt6(chi) << ", " << (uniform ? "uniform at 1%" : "NOT uniform at 1%") << ", "
                << fmt6(inside) << " of bins inside the 99% band"
                << (cap.detected() ? ", cap-shaped (overdispersed)" : "") << '\n';
    } else {
        r["error"] = h.error;
        ctx.err << "sbc: " << h.error << '\n';
    }
    r["seed"] = cfg.seed;
    write_out(ctx, "report.json", dump_json(r));
    return h.empty ? kExitError : kExitOk;
}

int cmd_repro(const RunConfig& cfg, const CommandContext& ctx) {
    const Generator& gen = cfg.require_generator();
    const ReproReport rep = reproducibility(gen, gen.prior(), cfg.estimator, cfg.diagnostics.repro_k, cfg.workers);

    std::vector<std::vector<std::string>> rows;
    for (std::size_t i = 0; i < rep.run_values.size(); ++i) rows.push_back({std::to_string(i), fmt9(rep.run_values[i])});
    write_out(ctx, "repro.csv", csv({"run_index", "nats"}, rows));

    json r = json::object();
    r["command"] = "repro";
    r["generator"] = to_string(gen.kind());
    r["k_runs"] = cfg.diagnostics.repro_k;
    r["finished"] = rep.run_values.size();
    r["diverged"] = rep.diverged;
    r["unreliable"] = rep.unreliable;
    r["mean"] = num(rep.mean);
    r["std"] = num(rep.std);
    r["rel_spread"] = num(rep.rel_spread);
    r["abs_spread"] = num(rep.abs_spread);
    r["seed"] = cfg.seed;
    write_out(ctx, "report.json", dump_json(r));

    if (rep.run_values.empty()) {
        ctx.err << "repro: every run diverged\n";
        return kExitDiverged;
    }
    ctx.out << "repro: mean " << fmt6(rep.mean) << " nats, std " << fmt6(rep.std);
    if (rep.rel_spread)
        ctx.out << ", rel_spread " << fmt6(*rep.rel_spread);
    else
        ctx.out << ", abs_spread " << fmt6(rep.abs_spread);
    ctx.out << " over " << rep.run_values.size() << " runs\n";
    if (rep.unreliable) ctx.err << "warning: " << rep.diverged << " runs diverged; report is unreliable\n";
    return kExitOk;
}

int cmd_tight(const RunConfig& cfg, const CommandContext& ctx) {
    const Generator& gen = cfg.require_generator();
    if (gen.kind() != GeneratorKind::mlp_deterministic)
        throw UnsupportedKindError("tight needs an mlp_deterministic generator (latent inversion differentiates g); got " +
                                   to_string(gen.kind()));
    const TightBoundResult t =
        tight_gilbo(gen, gen.prior(), cfg.diagnostics.tight_n, cfg.diagnostics.inversion, cfg.workers);

    json q = json::object();
    const auto& res = t.inversion_residuals;
    q["min"] = num(quantile(res, 0.0));
    q["p25"] = num(quantile(res, 0.25));
    q["median"] = num(quantile(res, 0.5));
    q["p75"] = num(quantile(res, 0.75));
    q["max"] = num(quantile(res, 1.0));
    json r = json::object();
    r["per_sample_nats"] = num(t.per_sample_nats);
    r["per_sample_bits"] = num(t.per_sample_nats / std::numbers::ln2);
    if (t.std_err) r["std_err"] = num(*t.std_err);
    r["fitted_log_std"] = num(t.fitted_log_std);
    r["residual_quantiles"] = q;
    r["n_samples"] = cfg.diagnostics.tight_n;
    r["n_failed"] = t.n_failed;
    r["seed"] = cfg.seed;
    write_out(ctx, "tight.json", dump_json(r));

    ctx.out << "tight bound " << fmt6(t.per_sample_nats) << " nats";
    if (t.std_err) ctx.out << " +- " << fmt6(*t.std_err);
    ctx.out << ", log_std " << fmt6(t.fitted_log_std) << ", " << t.n_failed << " failed inversions\n";
    return kExitOk;
}

int cmd_oracle(const RunConfig& cfg, const CommandContext& ctx) {
    const Generator& gen = cfg.require_generator();
    const auto mi = oracle_mi(gen);
    if (!mi) throw UnsupportedKindError("no exact oracle for generator kind " + to_string(gen.kind()));
    json r = json::object();
    r["command"] = "oracle";
    r["generator"] = to_string(gen.kind());
    r["oracle_nats"] = num(*mi);
    r["oracle_bits"] = num(*mi / std::numbers::ln2);
    write_out(ctx, "report.json", dump_json(r));
    ctx.out << fmt6(*mi) << " nats (" << fmt6(*mi / std::numbers::ln2) << " bits)\n";
    return kExitOk;
}

int cmd_zoo_list(const CommandContext& ctx) {
    for (const auto& e : zoo_entries()) ctx.out << e.name << "\t" << e.description << '\n';
    ctx.out << "vae\ttrained by `zoo train` (Gaussian decoder on an 8-Gaussian ring)\n";
    return kExitOk;
}

int cmd_zoo_train(const RunConfig& cfg, const CommandContext& ctx) {
    const auto data = synthetic_mixture_dataset(cfg.zoo.dataset_size, cfg.seed);
    const VaeResult vae = train_tiny_vae(data, cfg.zoo.vae);
    std::filesystem::create_directories(ctx.out_dir);
    const auto path = ctx.out_dir / cfg.zoo.out_file;
    save_weights(vae.generator, path);
    std::vector<std::vector<std::string>> rows;
    rows.reserve(vae.elbo_curve.size());
    for (const auto& [step, elbo] : vae.elbo_curve) rows.push_back({std::to_string(step), fmt9(elbo)});
    write_out(ctx, "vae_elbo.csv", csv({"step", "elbo"}, rows));
    const double last = vae.elbo_curve.empty() ? std::nan("") : vae.elbo_curve.back().second;
    ctx.out << "trained VAE generator written to " << path.string() << " (final batch ELBO " << fmt6(last) << ")\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"GILBO estimation toolkit"};
    app.require_subcommand(1);

    struct Flags {
        std::string config;
        std::string out = "./out";
        std::uint64_t seed = 0;
        std::vector<CLI::Option*> out_opts;
        std::vector<CLI::Option*> seed_opts;
    } flags;
    auto given = [](const std::vector<CLI::Option*>& opts) {
        return std::any_of(opts.begin(), opts.end(), [](const CLI::Option* o) { return o->count() > 0; });
    };
    auto add_flags = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", flags.config, "run config JSON");
        if (config_required) c->required();
        flags.out_opts.push_back(sub->add_option("--out", flags.out, "output directory (default ./out)"));
        flags.seed_opts.push_back(sub->add_option("--seed", flags.seed, "seed override"));
    };

    std::string command;
    for (const char* name : {"estimate", "sbc", "repro", "tight", "oracle"}) {
        auto* sub = app.add_subcommand(name);
        add_flags(sub, true);
        sub->callback([&command, name] { command = name; });
    }
    auto* zoo = app.add_subcommand("zoo", "generator zoo");
    zoo->require_subcommand(1);
    auto* zoo_list = zoo->add_subcommand("list");
    zoo_list->callback([&] { command = "zoo list"; });
    auto* zoo_train = zoo->add_subcommand("train");
    add_flags(zoo_train, true);
    zoo_train->callback([&] { command = "zoo train"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitError;
    }

    CommandContext ctx{flags.out, out, err};
    try {
        if (command == "zoo list") return cmd_zoo_list(ctx);
        RunConfig cfg = load_run_config(flags.config);
        if (given(flags.seed_opts)) cfg.apply_seed(flags.seed);
        if (!given(flags.out_opts) && cfg.output_dir) ctx.out_dir = *cfg.output_dir;
        if (command == "estimate") return cmd_estimate(cfg, ctx);
        if (command == "sbc") return cmd_sbc(cfg, ctx);
        if (command == "repro") return cmd_repro(cfg, ctx);
        if (command == "tight") return cmd_tight(cfg, ctx);
        if (command == "oracle") return cmd_oracle(cfg, ctx);
        if (command == "zoo train") return cmd_zoo_train(cfg, ctx);
        err << "unknown command\n";
        return kExitError;
    } catch (const DivergedError& e) {
        err << "diverged: " << e.what() << '\n';
        return kExitDiverged;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitError;
    }
}

} // namespace gilbo
