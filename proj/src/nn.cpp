#include "gilbo/nn.hpp"

#include <atomic>
#include <cmath>

#include <Eigen/Dense>

#include "gilbo/errors.hpp"

namespace gilbo {

namespace {

std::atomic<std::uint64_t> g_generation{1};

std::uint64_t next_generation() { return g_generation.fetch_add(1, std::memory_order_relaxed); }

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<RowMajor> map(double* p, int rows, int cols) { return {p, rows, cols}; }
Eigen::Map<const RowMajor> const_map(const double* p, int rows, int cols) { return {p, rows, cols}; }

} // namespace

Matrix Matrix::from_rows(const std::vector<Vec>& rows) {
    if (rows.empty()) return {};
    Matrix m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
    for (int i = 0; i < m.rows; ++i) {
        if (static_cast<int>(rows[i].size()) != m.cols) throw ShapeError("Matrix::from_rows: ragged rows");
        std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw ParseError("unknown activation \"" + s + "\"");
}

Mlp::Mlp(std::vector<int> layer_dims, Activation activation)
    : dims_(std::move(layer_dims)), activation_(activation), generation_(next_generation()) {
    if (dims_.size() < 2) throw ShapeError("Mlp: need at least input and output widths");
    for (int d : dims_)
        if (d <= 0) throw ShapeError("Mlp: layer widths must be positive");
    std::size_t n = 0;
    for (int l = 0; l + 1 < static_cast<int>(dims_.size()); ++l) {
        offsets_.push_back(n);
        n += static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
    }
    params_.assign(n, 0.0);
}

Mlp Mlp::glorot(std::vector<int> layer_dims, Activation activation, Rng& rng) {
    Mlp net(std::move(layer_dims), activation);
    for (int l = 0; l < net.num_layers(); ++l) {
        const double limit = std::sqrt(6.0 / (net.dims_[l] + net.dims_[l + 1]));
        for (double& w : net.mutable_weights(l)) w = rng.uniform(-limit, limit);
    }
    return net;
}

std::span<const double> Mlp::weights(int layer) const {
    return {params_.data() + weight_offset(layer), static_cast<std::size_t>(dims_[layer]) * dims_[layer + 1]};
}

std::span<const double> Mlp::biases(int layer) const {
    return {params_.data() + bias_offset(layer), static_cast<std::size_t>(dims_[layer + 1])};
}

std::span<double> Mlp::mutable_weights(int layer) {
    touch();
    return {params_.data() + weight_offset(layer), static_cast<std::size_t>(dims_[layer]) * dims_[layer + 1]};
}

std::span<double> Mlp::mutable_biases(int layer) {
    touch();
    return {params_.data() + bias_offset(layer), static_cast<std::size_t>(dims_[layer + 1])};
}

std::span<double> Mlp::mutable_parameters() {
    touch();
    return params_;
}

void Mlp::touch() { generation_ = next_generation(); }

ForwardCache Mlp::forward(const Matrix& x) const {
    if (x.cols != input_dim())
        throw ShapeError("Mlp::forward: input width " + std::to_string(x.cols) + " != " + std::to_string(input_dim()));
    ForwardCache cache;
    cache.net = this;
    cache.generation = generation_;
    cache.layers.reserve(dims_.size());
    cache.layers.push_back(x);
    for (int l = 0; l < num_layers(); ++l) {
        const int in = dims_[l];
        const int out = dims_[l + 1];
        const Matrix& a = cache.layers.back();
        Matrix h(a.rows, out);
        const auto W = const_map(params_.data() + weight_offset(l), in, out);
        const auto bias = Eigen::Map<const Eigen::RowVectorXd>(params_.data() + bias_offset(l), out);
        auto H = map(h.data.data(), a.rows, out);
        H.noalias() = const_map(a.data.data(), a.rows, in) * W;
        H.rowwise() += bias;
        if (l + 1 < num_layers()) {
            if (activation_ == Activation::tanh) {
                for (double& v : h.data) v = std::tanh(v);
            } else {
                for (double& v : h.data) v = v > 0.0 ? v : 0.0;
            }
        }
        cache.layers.push_back(std::move(h));
    }
    return cache;
}

Vec Mlp::forward_one(std::span<const double> x) const {
    Matrix m(1, static_cast<int>(x.size()));
    std::copy(x.begin(), x.end(), m.data.begin());
    return std::move(forward(m).layers.back().data);
}

MlpGradients Mlp::backward(const ForwardCache& cache, const Matrix& upstream) const {
    if (cache.net != this) throw CacheError("Mlp::backward: cache belongs to a different network");
    if (cache.generation != generation_) throw CacheError("Mlp::backward: stale cache (parameters changed since forward)");
    if (static_cast<int>(cache.layers.size()) != num_layers() + 1)
        throw CacheError("Mlp::backward: cache has wrong layer count");
    const Matrix& out = cache.output();
    if (upstream.rows != out.rows || upstream.cols != out.cols) throw ShapeError("Mlp::backward: upstream shape mismatch");

    MlpGradients g;
    g.params.assign(params_.size(), 0.0);
    Matrix delta = upstream;  // d/d pre-activation of the current layer
    for (int l = num_layers() - 1; l >= 0; --l) {
        const int in = dims_[l];
        const int nout = dims_[l + 1];
        const Matrix& a = cache.layers[l];
        const auto A = const_map(a.data.data(), a.rows, in);
        const auto D = const_map(delta.data.data(), a.rows, nout);
        map(g.params.data() + weight_offset(l), in, nout).noalias() = A.transpose() * D;
        Eigen::Map<Eigen::RowVectorXd>(g.params.data() + bias_offset(l), nout) = D.colwise().sum();
        Matrix prev(a.rows, in);
        map(prev.data.data(), a.rows, in).noalias() = D * const_map(params_.data() + weight_offset(l), in, nout).transpose();
        if (l > 0) {
            // a is the post-activation output of hidden layer l - 1.
            for (std::size_t k = 0; k < prev.data.size(); ++k) {
                const double h = a.data[k];
                prev.data[k] *= activation_ == Activation::tanh ? 1.0 - h * h : (h > 0.0 ? 1.0 : 0.0);
            }
        }
        delta = std::move(prev);
    }
    g.input = std::move(delta);
    return g;
}

nlohmann::json Mlp::to_json() const {
    nlohmann::json j;
    j["layer_dims"] = dims_;
    j["activation"] = to_string(activation_);
    auto& ws = j["weights"] = nlohmann::json::array();
    auto& bs = j["biases"] = nlohmann::json::array();
    for (int l = 0; l < num_layers(); ++l) {
        auto w = weights(l);
        auto b = biases(l);
        ws.push_back(std::vector<double>(w.begin(), w.end()));
        bs.push_back(std::vector<double>(b.begin(), b.end()));
    }
    return j;
}

Mlp Mlp::from_json(const nlohmann::json& j) {
    try {
        if (!j.is_object()) throw ParseError("network: expected a JSON object");
        for (const char* key : {"layer_dims", "activation", "weights", "biases"})
            if (!j.contains(key)) throw ParseError(std::string("network: missing key \"") + key + "\"");
        Mlp net(j.at("layer_dims").get<std::vector<int>>(),
                activation_from_string(j.at("activation").get<std::string>()));
        const auto& ws = j.at("weights");
        const auto& bs = j.at("biases");
        if (!ws.is_array() || !bs.is_array() || static_cast<int>(ws.size()) != net.num_layers() ||
            static_cast<int>(bs.size()) != net.num_layers())
            throw ParseError("network: weights/biases must have one entry per layer");
        for (int l = 0; l < net.num_layers(); ++l) {
            auto w = ws[l].get<std::vector<double>>();
            auto b = bs[l].get<std::vector<double>>();
            auto dw = net.mutable_weights(l);
            auto db = net.mutable_biases(l);
            if (w.size() != dw.size() || b.size() != db.size())
                throw ParseError("network: layer " + std::to_string(l) + " has wrong parameter count");
            std::copy(w.begin(), w.end(), dw.begin());
            std::copy(b.begin(), b.end(), db.begin());
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("network: ") + e.what());
    } catch (const ShapeError& e) {
        throw ParseError(std::string("network: ") + e.what());
    }
}

double LrSchedule::lr(std::int64_t step) const {
    return initial_lr * std::pow(decay_factor, static_cast<double>(step / decay_every));
}

void LrSchedule::validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("schedule: initial_lr must be positive");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("schedule: decay_factor must be in (0, 1]");
    if (decay_every <= 0) throw ConfigError("schedule: decay_every must be positive");
}

void adam_step(std::span<double> weights, std::span<const double> grads, AdamState& state,
               const LrSchedule& schedule) {
    if (weights.size() != grads.size() || state.m.size() != weights.size() || state.v.size() != weights.size())
        throw ShapeError("adam_step: weights, gradients and moments must have equal size");
    for (double g : grads)
        if (!std::isfinite(g)) throw DivergedError("adam_step: non-finite gradient", state.t);
    const double lr = schedule.lr(state.t);
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < weights.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        weights[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
}

void adam_step(Mlp& net, std::span<const double> grads, AdamState& state, const LrSchedule& schedule) {
    adam_step(net.mutable_parameters(), grads, state, schedule);
}

} // namespace gilbo
