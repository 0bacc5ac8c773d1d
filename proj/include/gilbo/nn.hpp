#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gilbo/dists.hpp"
#include "gilbo/rng.hpp"

namespace gilbo {

// Row-major batch of vectors: rows = batch, cols = width.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    std::span<double> row(int i) { return {data.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)}; }
    std::span<const double> row(int i) const {
        return {data.data() + static_cast<std::size_t>(i) * cols, static_cast<std::size_t>(cols)};
    }
    double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * cols + j]; }

    static Matrix from_rows(const std::vector<Vec>& rows);
};

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

class Mlp;

// Post-activation values of every layer, tied to one version of one network.
struct ForwardCache {
    const Mlp* net = nullptr;
    std::uint64_t generation = 0;
    std::vector<Matrix> layers;  // layers[0] = input, layers.back() = output

    const Matrix& output() const { return layers.back(); }
};

struct MlpGradients {
    Vec params;    // same flat layout as Mlp::parameters()
    Matrix input;  // d/d input, one row per batch element
};

// Fully connected network; tanh/relu on hidden layers, linear output layer.
// Layer i maps layer_dims[i] -> layer_dims[i+1] with a (in x out) row-major
// weight matrix followed by the bias. All parameters live in one flat vector.
class Mlp {
public:
    Mlp(std::vector<int> layer_dims, Activation activation);

    // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
    static Mlp glorot(std::vector<int> layer_dims, Activation activation, Rng& rng);

    const std::vector<int>& layer_dims() const { return dims_; }
    int input_dim() const { return dims_.front(); }
    int output_dim() const { return dims_.back(); }
    int num_layers() const { return static_cast<int>(dims_.size()) - 1; }
    Activation activation() const { return activation_; }

    std::span<const double> weights(int layer) const;
    std::span<const double> biases(int layer) const;
    std::span<double> mutable_weights(int layer);
    std::span<double> mutable_biases(int layer);

    std::span<const double> parameters() const { return params_; }
    std::span<double> mutable_parameters();
    std::size_t parameter_count() const { return params_.size(); }

    // Changes whenever parameters may have been written; caches record it.
    std::uint64_t generation() const { return generation_; }

    ForwardCache forward(const Matrix& x) const;
    Vec forward_one(std::span<const double> x) const;

    // Gradients of sum_i <upstream_i, output_i> w.r.t. parameters and input.
    MlpGradients backward(const ForwardCache& cache, const Matrix& upstream) const;

    nlohmann::json to_json() const;
    static Mlp from_json(const nlohmann::json& j);

private:
    void touch();
    std::size_t weight_offset(int layer) const { return offsets_[layer]; }
    std::size_t bias_offset(int layer) const {
        return offsets_[layer] + static_cast<std::size_t>(dims_[layer]) * dims_[layer + 1];
    }

    std::vector<int> dims_;
    Activation activation_;
    std::vector<std::size_t> offsets_;
    Vec params_;
    std::uint64_t generation_;
};

// lr(t) = initial_lr * decay_factor^floor(t / decay_every)
struct LrSchedule {
    double initial_lr = 1e-3;
    double decay_factor = 0.5;
    std::int64_t decay_every = 10000;

    double lr(std::int64_t step) const;
    void validate() const;
};

struct AdamState {
    Vec m;
    Vec v;
    std::int64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam descent step with lr = schedule.lr(state.t); then t += 1.
// Throws DivergedError if any gradient is non-finite (weights left untouched).
void adam_step(std::span<double> weights, std::span<const double> grads, AdamState& state,
               const LrSchedule& schedule);
void adam_step(Mlp& net, std::span<const double> grads, AdamState& state, const LrSchedule& schedule);

} // namespace gilbo
