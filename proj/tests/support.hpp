#pragma once

// Checks shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "gilbo/nn.hpp"
#include "gilbo/rng.hpp"

namespace gilbo::testing {

inline double fd_relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-4});
}

// Random net with at most [8, 16, 16, 4] widths and 1 to 3 layers.
inline Mlp random_net(Rng& rng, Activation act) {
    const int layers = 1 + static_cast<int>(rng.index(3));
    std::vector<int> dims{1 + static_cast<int>(rng.index(8))};
    for (int l = 1; l < layers; ++l) dims.push_back(1 + static_cast<int>(rng.index(16)));
    dims.push_back(1 + static_cast<int>(rng.index(4)));
    Mlp net = Mlp::glorot(dims, act, rng);
    for (double& b : net.mutable_parameters()) b += 0.1 * rng.normal();
    return net;
}

struct FdReport {
    double max_param_error = 0.0;
    double max_input_error = 0.0;
};

// Central differences (h = 1e-5) of sum_i <u_i, net(x_i)> against backward().
inline FdReport finite_difference_check(Mlp net, Rng& rng, int batch = 3) {
    const double h = 1e-5;
    Matrix x(batch, net.input_dim());
    for (double& v : x.data) v = rng.uniform(-1.5, 1.5);
    Matrix up(batch, net.output_dim());
    for (double& v : up.data) v = rng.normal();
    auto objective = [&](const Mlp& n, const Matrix& in) {
        const ForwardCache c = n.forward(in);
        const Matrix& out = c.output();
        double s = 0.0;
        for (std::size_t k = 0; k < out.data.size(); ++k) s += up.data[k] * out.data[k];
        return s;
    };
    auto cache = net.forward(x);
    MlpGradients g = net.backward(cache, up);
    FdReport rep;
    for (std::size_t i = 0; i < net.parameter_count(); ++i) {
        const double orig = net.parameters()[i];
        net.mutable_parameters()[i] = orig + h;
        const double fp = objective(net, x);
        net.mutable_parameters()[i] = orig - h;
        const double fm = objective(net, x);
        net.mutable_parameters()[i] = orig;
        rep.max_param_error = std::max(rep.max_param_error, fd_relative_error(g.params[i], (fp - fm) / (2 * h)));
    }
    for (std::size_t k = 0; k < x.data.size(); ++k) {
        Matrix xp = x, xm = x;
        xp.data[k] += h;
        xm.data[k] -= h;
        const double num = (objective(net, xp) - objective(net, xm)) / (2 * h);
        rep.max_input_error = std::max(rep.max_input_error, fd_relative_error(g.input.data[k], num));
    }
    return rep;
}

// The 20-net suite: 10 tanh and 10 relu nets.
inline double finite_difference_suite(std::uint64_t seed = 2024) {
    Rng rng(seed);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        Mlp net = random_net(rng, i % 2 == 0 ? Activation::tanh : Activation::relu);
        FdReport r = finite_difference_check(net, rng);
        worst = std::max({worst, r.max_param_error, r.max_input_error});
    }
    return worst;
}

// Adam after one step from w = 0 with gradient 1, written out from the update rule.
inline double adam_first_step_oracle(double lr) {
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 1.0;
    const double m = (1 - b1) * g;
    const double v = (1 - b2) * g * g;
    const double mhat = m / (1 - b1);
    const double vhat = v / (1 - b2);
    return 0.0 - lr * mhat / (std::sqrt(vhat) + eps);
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::filesystem::path fresh_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("gilbo_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

// Runs the gilbo binary, capturing stdout and stderr; returns the exit status.
struct ProcessResult {
    int status = -1;
    std::string out;
    std::string err;
};

inline ProcessResult run_binary(const std::string& binary, const std::string& args, const std::filesystem::path& scratch) {
    const auto out = scratch / "stdout.txt";
    const auto err = scratch / "stderr.txt";
    const std::string cmd = "\"" + binary + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
    const int raw = std::system(cmd.c_str());
    ProcessResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

} // namespace gilbo::testing
