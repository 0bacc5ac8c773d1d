#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"

#include "gilbo/errors.hpp"
#include "gilbo/estimator.hpp"
#include "gilbo/generators.hpp"
#include "gilbo/io.hpp"
#include "support.hpp"

using namespace gilbo;
using namespace gilbo::testing;

TEST_CASE("map examples") {
    CHECK(Generator::sign(2).map(Vec{-0.3, 0.7}) == Vec{-1.0, 1.0});
    CHECK(Generator::sign(1).map(Vec{0.0}) == Vec{1.0});
    CHECK(Generator::sign(1).map(Vec{-0.0}) == Vec{1.0});
    CHECK(Generator::quantizer(1, 4).map(Vec{0.1}) == Vec{0.25});
    CHECK(Generator::quantizer(1, 4).map(Vec{-0.99}) == Vec{-0.75});
    CHECK(Generator::constant(3, 2).map(Vec{0.1, -0.5, 0.9}) == Vec{0.0, 0.0});
    CHECK(Generator::float_cast(1).map(Vec{0.1})[0] == static_cast<double>(0.1f));
    CHECK(Generator::float_cast(1).map(Vec{0.5})[0] == 0.5);
}

TEST_CASE("draw_pair examples") {
    Rng rng(1);
    auto g = Generator::sign(2);
    for (int i = 0; i < 100; ++i) {
        Pair p = draw_pair(g, g.prior(), rng);
        REQUIRE(p.z.size() == 2);
        for (int k = 0; k < 2; ++k) CHECK(p.x[k] == (p.z[k] < 0 ? -1.0 : 1.0));
    }
    Rng a(5), b(5);
    auto q = Generator::quantizer(3, 7);
    for (int i = 0; i < 20; ++i) {
        Pair pa = draw_pair(q, q.prior(), a), pb = draw_pair(q, q.prior(), b);
        CHECK(pa.z == pb.z);
        CHECK(pa.x == pb.x);
    }
    auto zero = Generator::mlp(Mlp({2, 4, 3}, Activation::tanh));
    for (int i = 0; i < 10; ++i) CHECK(draw_pair(zero, zero.prior(), rng).x == Vec{0.0, 0.0, 0.0});
    CHECK_THROWS_AS(draw_pair(g, UniformBoxPrior(3), rng), ShapeError);
}

TEST_CASE("sample_x support errors") {
    Rng rng(2);
    CHECK_THROWS_AS(Generator::sign(1).sample_x(Vec{1.0}, rng), SupportError);
    CHECK_THROWS_AS(Generator::quantizer(2, 4).sample_x(Vec{0.0, -1.2}, rng), SupportError);
    CHECK_THROWS_AS(Generator::sign(2).sample_x(Vec{0.0}, rng), ShapeError);
    CHECK_THROWS_AS(Generator::quantizer(1, 1), ParameterError);
}

TEST_CASE("deterministic kinds are pure functions of z") {
    Rng rng(3);
    Rng net_rng(4);
    for (const auto& g : {Generator::sign(3), Generator::quantizer(3, 5), Generator::float_cast(3),
                          Generator::random_mlp(3, 2, {8}, Activation::tanh, 4)}) {
        CHECK(g.deterministic());
        for (int i = 0; i < 20; ++i) {
            Vec z = sample(g.prior(), rng);
            auto s1 = g.sample_x(z, rng), s2 = g.sample_x(z, rng);
            CHECK(s1.x == s2.x);
            CHECK_FALSE(s1.log_px_given_z.has_value());
        }
    }
}

TEST_CASE("quantizer idempotence") {
    Rng rng(5);
    for (int k : {2, 3, 4, 7, 16, 33}) {
        auto g = Generator::quantizer(1, k);
        const auto& q = std::get<QuantizerParams>(g.params());
        for (int i = 0; i < 500; ++i) {
            Vec z = sample(g.prior(), rng);
            Vec x = g.map(z);
            CHECK(q.cell_index(g.map(x)[0]) == q.cell_index(z[0]));
            CHECK(g.map(x) == x);
        }
    }
}

TEST_CASE("gaussian decoder with vanishing noise is its mean net") {
    Rng rng(6);
    Mlp net = Mlp::glorot({2, 5, 3}, Activation::tanh, rng);
    auto g = Generator::gaussian_decoder(net, Vec(3, -20.0));
    CHECK_FALSE(g.deterministic());
    for (int i = 0; i < 50; ++i) {
        Vec z = sample(g.prior(), rng);
        Vec mean = net.forward_one(z);
        auto s = g.sample_x(z, rng);
        for (int j = 0; j < 3; ++j) CHECK(std::abs(s.x[j] - mean[j]) < 1e-6);
        REQUIRE(s.log_px_given_z.has_value());
        CHECK(*s.log_px_given_z == doctest::Approx(g.log_likelihood(s.x, z)).epsilon(1e-8));
    }
}

TEST_CASE("gaussian decoder log-likelihood averages to the negative entropy") {
    Rng rng(7);
    Mlp net = Mlp::glorot({1, 4, 2}, Activation::relu, rng);
    Vec log_std{-0.3, 0.8};
    auto g = Generator::gaussian_decoder(net, log_std);
    Vec z{0.4};
    const int n = 20000;
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
        double lp = g.log_likelihood(g.sample_x(z, rng).x, z);
        sum += lp;
        sq += lp * lp;
    }
    double mean = sum / n;
    double se = std::sqrt((sq / n - mean * mean) / (n - 1));
    DiagGaussian ref(Vec{0.0, 0.0}, log_std);
    CHECK(std::abs(mean + ref.entropy()) < 3 * se);
    CHECK_THROWS_AS(Generator::sign(1).log_likelihood(Vec{1.0}, Vec{0.5}), UnsupportedKindError);
}

TEST_CASE("save then load is bitwise identical") {
    auto dir = fresh_dir("generators_io");
    Rng rng(8);
    std::vector<Generator> gens{Generator::random_mlp(3, 4, {16, 16}, Activation::tanh, 11),
                                Generator::gaussian_decoder(Mlp::glorot({2, 6, 2}, Activation::relu, rng), Vec{-0.5, 0.25}),
                                Generator::quantizer(2, 9), Generator::sign(4), Generator::float_cast(1)};
    for (std::size_t k = 0; k < gens.size(); ++k) {
        auto path = dir / ("g" + std::to_string(k) + ".json");
        save_weights(gens[k], path);
        CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
        Generator back = load_weights(path);
        CHECK(back.kind() == gens[k].kind());
        CHECK(back.latent_dim() == gens[k].latent_dim());
        CHECK(back.output_dim() == gens[k].output_dim());
        CHECK(back.prior_kind() == gens[k].prior_kind());
        for (int i = 0; i < 100; ++i) {
            Vec z = sample(gens[k].prior(), rng);
            CHECK(back.map(z) == gens[k].map(z));
        }
    }
}

TEST_CASE("truncated and malformed files") {
    auto dir = fresh_dir("generators_bad");
    auto gen = Generator::random_mlp(2, 2, {4}, Activation::tanh, 3);
    std::string text = gen.to_json().dump(1);
    write_text(dir / "cut.json", text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_weights(dir / "cut.json"), ParseError);
    try {
        load_weights(dir / "cut.json");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("cut.json:") != std::string::npos);
    }
    write_text(dir / "kind.json", R"({"kind": "gan", "latent_dim": 1, "output_dim": 1, "params": {}})");
    CHECK_THROWS_AS(load_weights(dir / "kind.json"), UnsupportedKindError);
    write_text(dir / "dims.json", R"({"kind": "sign", "latent_dim": 2, "output_dim": 3, "params": {}})");
    CHECK_THROWS_AS(load_weights(dir / "dims.json"), ParseError);
    write_text(dir / "nolevels.json", R"({"kind": "quantizer", "latent_dim": 1, "output_dim": 1, "params": {}})");
    CHECK_THROWS_AS(load_weights(dir / "nolevels.json"), ParseError);
    CHECK_THROWS(load_weights(dir / "missing.json"));
}

TEST_CASE("descriptor format") {
    auto j = Generator::quantizer(2, 16).to_json();
    CHECK(j["kind"] == "quantizer");
    CHECK(j["latent_dim"] == 2);
    CHECK(j["output_dim"] == 2);
    CHECK(j["params"]["levels"] == 16);
}

TEST_CASE("synthetic mixture dataset") {
    auto data = synthetic_mixture_dataset();
    CHECK(data.size() == 4096);
    CHECK(data == synthetic_mixture_dataset());
    double mean_r = 0;
    for (const auto& x : data) mean_r += std::hypot(x[0], x[1]);
    CHECK(mean_r / data.size() == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("VAE on a single repeated point learns that point") {
    std::vector<Vec> data(256, Vec{0.7, -1.3});
    VaeConfig cfg;
    cfg.steps = 2000;
    auto res = train_tiny_vae(data, cfg);
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        Vec z = sample(res.generator.prior(), rng);
        Vec m = res.generator.map(z);
        CHECK(std::abs(m[0] - 0.7) < 0.05);
        CHECK(std::abs(m[1] + 1.3) < 0.05);
    }
}

TEST_CASE("VAE ELBO is finite and improves across 500-step windows") {
    VaeConfig cfg;
    cfg.steps = 4000;
    auto res = train_tiny_vae(synthetic_mixture_dataset(), cfg);
    REQUIRE(res.elbo_curve.size() == 4000);
    std::vector<double> windows;
    for (std::size_t w = 0; w < 8; ++w) {
        double s = 0;
        for (std::size_t i = w * 500; i < (w + 1) * 500; ++i) {
            REQUIRE(std::isfinite(res.elbo_curve[i].second));
            s += res.elbo_curve[i].second;
        }
        windows.push_back(s / 500);
    }
    CHECK(windows.back() > windows.front());
    int drops = 0;
    for (std::size_t w = 1; w < windows.size(); ++w) drops += windows[w] < windows[w - 1] - 0.05;
    CHECK(drops <= 1);
}

TEST_CASE("VAE GILBO is not significantly negative") {
    VaeConfig cfg;
    auto vae = train_tiny_vae(synthetic_mixture_dataset(), cfg).generator;
    CHECK(vae.kind() == GeneratorKind::gaussian_decoder);
    CHECK(vae.prior_kind() == PriorKind::standard_normal);
    GilboConfig gc;
    gc.max_steps = 5000;
    auto m = measure_gilbo(vae, vae.prior(), gc);
    CHECK(m.estimate.nats >= -3 * m.estimate.std_err);
}

TEST_CASE("VAE config validation") {
    CHECK_THROWS_AS(train_tiny_vae({}, VaeConfig{}), ValidationError);
    VaeConfig bad;
    bad.latent_dim = 5;
    CHECK_THROWS_AS(train_tiny_vae({Vec{0.0}}, bad), ConfigError);
}
