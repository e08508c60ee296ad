#include "featrank/nn.hpp"

#include "featrank/errors.hpp"
#include "featrank/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace featrank {

void NetworkSpec::validate() const {
    if (layer_sizes.size() < 2) throw ConfigError("network needs at least an input and an output size");
    for (std::size_t s : layer_sizes) {
        if (s == 0) throw ConfigError("network layer sizes must be >= 1");
    }
}

Network Network::initialize(const NetworkSpec& spec, std::uint64_t seed, bool with_dropin) {
    spec.validate();
    Network net;
    net.spec = spec;
    for (std::size_t l = 0; l < spec.dense_layers(); ++l) {
        const std::size_t fan_in = spec.layer_sizes[l];
        const std::size_t fan_out = spec.layer_sizes[l + 1];
        Rng rng(derive_seed(seed, {0x1a7e, l}));
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        DenseLayer layer{Dense2D(fan_in, fan_out), std::vector<double>(fan_out, 0.0)};
        for (double& w : layer.weights.values()) w = rng.uniform(-limit, limit);
        net.momentum.layers.push_back(
            DenseLayer{Dense2D(fan_in, fan_out), std::vector<double>(fan_out, 0.0)});
        net.layers.push_back(std::move(layer));
    }
    if (with_dropin) {
        net.dropin = DropInLayer(spec.input_dim());
        net.momentum.dropin.assign(spec.input_dim(), 0.0);
    }
    return net;
}

void Network::validate() const {
    spec.validate();
    if (layers.size() != spec.dense_layers()) throw ShapeError("network layer count disagrees with spec");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.weights.rows() != spec.layer_sizes[l] || layer.weights.cols() != spec.layer_sizes[l + 1] ||
            layer.bias.size() != spec.layer_sizes[l + 1]) {
            throw ShapeError("layer " + std::to_string(l) + " shape disagrees with spec");
        }
    }
    if (dropin && dropin->size() != spec.input_dim()) throw ShapeError("drop-in width disagrees with spec");
}

bool Network::all_finite() const {
    auto finite = [](double v) { return std::isfinite(v); };
    for (const auto& layer : layers) {
        if (!layer.weights.all_finite() || !std::all_of(layer.bias.begin(), layer.bias.end(), finite)) return false;
    }
    if (dropin && !std::all_of(dropin->weights().begin(), dropin->weights().end(), finite)) return false;
    return true;
}

void TrainConfig::validate() const {
    if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
    if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (penalty) penalty->validate();
}

namespace {

constexpr std::size_t kRowBlock = 32;

// out(i, :) = bias + sum_k in(i, k) * W(k, :), accumulated in ascending k for
// every row, so a row's result never depends on which other rows share the batch.
Dense2D affine(const Dense2D& in, const DenseLayer& layer) {
    const std::size_t rows = in.rows(), fan_in = in.cols(), fan_out = layer.weights.cols();
    Dense2D out(rows, fan_out);
    for (std::size_t r0 = 0; r0 < rows; r0 += kRowBlock) {
        const std::size_t r1 = std::min(rows, r0 + kRowBlock);
        for (std::size_t i = r0; i < r1; ++i) std::copy(layer.bias.begin(), layer.bias.end(), out.row(i).begin());
        for (std::size_t k = 0; k < fan_in; ++k) {
            const double* __restrict w = layer.weights.row(k).data();
            for (std::size_t i = r0; i < r1; ++i) {
                const double x = in(i, k);
                if (x == 0.0) continue;
                double* __restrict o = out.row(i).data();
                for (std::size_t j = 0; j < fan_out; ++j) o[j] += x * w[j];
            }
        }
    }
    return out;
}

// grad.weights += in^T * dz ; grad.bias += column sums of dz (ascending row order).
void accumulate_param_grad(const Dense2D& in, const Dense2D& dz, DenseLayer& grad) {
    const std::size_t rows = in.rows(), fan_in = in.cols(), fan_out = dz.cols();
    for (std::size_t k = 0; k < fan_in; ++k) {
        double* __restrict g = grad.weights.row(k).data();
        for (std::size_t i = 0; i < rows; ++i) {
            const double x = in(i, k);
            if (x == 0.0) continue;
            const double* __restrict d = dz.row(i).data();
            for (std::size_t j = 0; j < fan_out; ++j) g[j] += x * d[j];
        }
    }
    double* __restrict b = grad.bias.data();
    for (std::size_t i = 0; i < rows; ++i) {
        const double* __restrict d = dz.row(i).data();
        for (std::size_t j = 0; j < fan_out; ++j) b[j] += d[j];
    }
}

Dense2D transpose(const Dense2D& m) {
    Dense2D t(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
    }
    return t;
}

// dz * W^T, with W^T passed pre-transposed (fan_out x fan_in).
Dense2D propagate_to_input(const Dense2D& dz, const Dense2D& weights_t) {
    const std::size_t rows = dz.rows(), fan_out = dz.cols(), fan_in = weights_t.cols();
    Dense2D din(rows, fan_in);
    for (std::size_t r0 = 0; r0 < rows; r0 += kRowBlock) {
        const std::size_t r1 = std::min(rows, r0 + kRowBlock);
        for (std::size_t j = 0; j < fan_out; ++j) {
            const double* __restrict w = weights_t.row(j).data();
            for (std::size_t i = r0; i < r1; ++i) {
                const double g = dz(i, j);
                if (g == 0.0) continue;
                double* __restrict o = din.row(i).data();
                for (std::size_t k = 0; k < fan_in; ++k) o[k] += g * w[k];
            }
        }
    }
    return din;
}

void activate(Activation act, const Dense2D& pre, Dense2D& post) {
    const auto in = pre.values();
    auto out = post.values();
    if (act == Activation::relu) {
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
    }
}

// dh <- dh * act'(pre), using the stored activations where cheaper.
void activation_backward(Activation act, const Dense2D& pre, const Dense2D& post, Dense2D& dh) {
    auto g = dh.values();
    if (act == Activation::relu) {
        const auto z = pre.values();
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!(z[i] > 0.0)) g[i] = 0.0;
        }
    } else {
        const auto h = post.values();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - h[i] * h[i];
    }
}

void softmax_rows(const Dense2D& logits, Dense2D& probs) {
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto z = logits.row(i);
        auto p = probs.row(i);
        const double top = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) {
            p[k] = std::exp(z[k] - top);
            sum += p[k];
        }
        for (double& v : p) v /= sum;
    }
}

struct Trace {
    Dense2D input;                // drop-in output (or the raw batch)
    std::vector<Dense2D> pre;     // per dense layer, before activation
    std::vector<Dense2D> post;    // per dense layer, after activation; last = probabilities
};

void check_input(const Network& net, const Dense2D& batch) {
    if (batch.cols() != net.spec.input_dim()) {
        throw ShapeError("input has " + std::to_string(batch.cols()) + " features, network expects " +
                         std::to_string(net.spec.input_dim()));
    }
}

Trace run_forward(const Network& net, const Dense2D& batch) {
    check_input(net, batch);
    Trace t;
    t.input = batch;
    if (net.dropin) {
        const auto& layer = *net.dropin;
        for (std::size_t i = 0; i < t.input.rows(); ++i) {
            auto row = t.input.row(i);
            for (std::size_t j = 0; j < row.size(); ++j) row[j] = layer.active(j) ? row[j] * layer.weight(j) : 0.0;
        }
    }
    const std::size_t depth = net.layers.size();
    t.pre.reserve(depth);
    t.post.reserve(depth);
    for (std::size_t l = 0; l < depth; ++l) {
        const Dense2D& in = l == 0 ? t.input : t.post[l - 1];
        t.pre.push_back(affine(in, net.layers[l]));
        t.post.emplace_back(t.pre[l].rows(), t.pre[l].cols());
        if (l + 1 < depth) {
            activate(net.spec.activation, t.pre[l], t.post[l]);
        } else {
            softmax_rows(t.pre[l], t.post[l]);
        }
    }
    return t;
}

Gradients zero_gradients(const Network& net) {
    Gradients g;
    for (const auto& layer : net.layers) {
        g.layers.push_back(
            DenseLayer{Dense2D(layer.weights.rows(), layer.weights.cols()), std::vector<double>(layer.bias.size())});
    }
    if (net.dropin) g.dropin.assign(net.dropin->size(), 0.0);
    return g;
}

// Runs the dense stack backwards from d/d(logits), filling parameter
// gradients when `grad` is given. Returns d/d(first-layer pre-activation).
Dense2D backpropagate(const Network& net, const Trace& t, Dense2D dz, Gradients* grad) {
    for (std::size_t l = net.layers.size(); l-- > 0;) {
        const Dense2D& in = l == 0 ? t.input : t.post[l - 1];
        if (grad != nullptr) accumulate_param_grad(in, dz, grad->layers[l]);
        if (l == 0) break;
        Dense2D dh = propagate_to_input(dz, transpose(net.layers[l].weights));
        activation_backward(net.spec.activation, t.pre[l - 1], t.post[l - 1], dh);
        dz = std::move(dh);
    }
    return dz;
}

// Mean cross-entropy from the stored logits (log-sum-exp form).
double cross_entropy(const Trace& t, std::span<const Label> y) {
    const Dense2D& logits = t.pre.back();
    double total = 0.0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto z = logits.row(i);
        const double top = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double v : z) sum += std::exp(v - top);
        total += top + std::log(sum) - z[y[i]];
    }
    return total / static_cast<double>(logits.rows());
}

void check_labels(const Network& net, const Dense2D& X, std::span<const Label> y) {
    if (y.size() != X.rows()) throw ShapeError("label count disagrees with row count");
    for (Label label : y) {
        if (label >= net.spec.class_count()) throw ShapeError("label outside the network's class range");
    }
}

// Drop-in weight gradient: sum_i x(i, j) * dA(i, j) where dA = dz0 * W0^T,
// evaluated only where x(i, j) != 0 and position j is active.
void accumulate_dropin_grad(const Network& net, const Dense2D& X, const Dense2D& dz0, std::vector<double>& grad) {
    const auto& layer = *net.dropin;
    const Dense2D& w = net.layers.front().weights;
    const std::size_t fan_out = w.cols();
    for (std::size_t i = 0; i < X.rows(); ++i) {
        const double* __restrict d = dz0.row(i).data();
        for (std::size_t j = 0; j < X.cols(); ++j) {
            const double x = X(i, j);
            if (x == 0.0 || !layer.active(j)) continue;
            const double* __restrict wr = w.row(j).data();
            double dot = 0.0;
            for (std::size_t k = 0; k < fan_out; ++k) dot += d[k] * wr[k];
            grad[j] += x * dot;
        }
    }
}

}  // namespace

Dense2D forward(const Network& net, const Dense2D& batch) { return std::move(run_forward(net, batch).post.back()); }

std::vector<Label> predict(const Network& net, const Dense2D& batch) {
    const Dense2D probs = forward(net, batch);
    std::vector<Label> out(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const auto p = probs.row(i);
        std::size_t best = 0;
        for (std::size_t k = 1; k < p.size(); ++k) {
            if (p[k] > p[best]) best = k;
        }
        out[i] = static_cast<Label>(best);
    }
    return out;
}

double accuracy(const Network& net, const Dense2D& X, std::span<const Label> y) {
    if (X.rows() == 0) throw ShapeError("accuracy of an empty batch is undefined");
    if (y.size() != X.rows()) throw ShapeError("label count disagrees with row count");
    const std::vector<Label> pred = predict(net, X);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double objective(const Network& net, const Dense2D& X, std::span<const Label> y, const PenaltyConfig* penalty) {
    check_labels(net, X, y);
    const Trace t = run_forward(net, X);
    double value = cross_entropy(t, y);
    if (penalty != nullptr && net.dropin) value += penalty_value(*net.dropin, *penalty);
    return value;
}

ObjectiveGradient objective_gradient(const Network& net, const Dense2D& X, std::span<const Label> y,
                                     const PenaltyConfig* penalty) {
    check_labels(net, X, y);
    const Trace t = run_forward(net, X);
    ObjectiveGradient out{cross_entropy(t, y), zero_gradients(net)};

    const double inv_rows = 1.0 / static_cast<double>(X.rows());
    Dense2D dz = t.post.back();
    for (std::size_t i = 0; i < dz.rows(); ++i) {
        auto row = dz.row(i);
        row[y[i]] -= 1.0;
        for (double& v : row) v *= inv_rows;
    }

    const Dense2D dz0 = backpropagate(net, t, std::move(dz), &out.grad);
    if (!net.dropin) return out;

    accumulate_dropin_grad(net, X, dz0, out.grad.dropin);
    if (penalty != nullptr) {
        out.value += penalty_value(*net.dropin, *penalty);
        add_penalty_gradient(*net.dropin, *penalty, out.grad.dropin);
    }
    for (std::size_t j = 0; j < net.dropin->size(); ++j) {
        if (!net.dropin->active(j)) out.grad.dropin[j] = 0.0;
    }
    return out;
}

Dense2D input_gradients(const Network& net, const Dense2D& X, std::span<const Label> targets) {
    check_labels(net, X, targets);
    constexpr std::size_t kChunk = 512;
    Dense2D out(X.rows(), X.cols());
    std::vector<std::size_t> rows;
    for (std::size_t r0 = 0; r0 < X.rows(); r0 += kChunk) {
        const std::size_t r1 = std::min(X.rows(), r0 + kChunk);
        rows.resize(r1 - r0);
        std::iota(rows.begin(), rows.end(), r0);
        const Dense2D chunk = X.select_rows(rows);
        const Trace t = run_forward(net, chunk);

        // d p_t / d z_k = p_t (delta_tk - p_k)
        Dense2D dz = t.post.back();
        for (std::size_t i = 0; i < dz.rows(); ++i) {
            auto p = dz.row(i);
            const double pt = p[targets[r0 + i]];
            for (std::size_t k = 0; k < p.size(); ++k) p[k] = pt * ((k == targets[r0 + i] ? 1.0 : 0.0) - p[k]);
        }
        const Dense2D dz0 = backpropagate(net, t, std::move(dz), nullptr);
        const Dense2D dinput = propagate_to_input(dz0, transpose(net.layers.front().weights));
        for (std::size_t i = 0; i < dinput.rows(); ++i) {
            auto src = dinput.row(i);
            auto dst = out.row(r0 + i);
            for (std::size_t j = 0; j < src.size(); ++j) {
                if (net.dropin) {
                    dst[j] = net.dropin->active(j) ? src[j] * net.dropin->weight(j) : 0.0;
                } else {
                    dst[j] = src[j];
                }
            }
        }
    }
    return out;
}

std::vector<double> input_gradient(const Network& net, std::span<const double> x, std::size_t target_class) {
    if (x.size() != net.spec.input_dim()) {
        throw ShapeError("input has " + std::to_string(x.size()) + " features, network expects " +
                         std::to_string(net.spec.input_dim()));
    }
    if (target_class >= net.spec.class_count()) throw ShapeError("target class out of range");
    const Dense2D row(1, x.size(), std::vector<double>(x.begin(), x.end()));
    const Label target = static_cast<Label>(target_class);
    const Dense2D g = input_gradients(net, row, std::span<const Label>(&target, 1));
    return {g.values().begin(), g.values().end()};
}

namespace {

void momentum_step(std::span<double> params, std::span<double> velocity, std::span<const double> grad, double lr,
                   double mu) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        velocity[i] = mu * velocity[i] + grad[i];
        params[i] -= lr * velocity[i];
    }
}

void apply_update(Network& net, const Gradients& g, double lr, double mu) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        momentum_step(net.layers[l].weights.values(), net.momentum.layers[l].weights.values(),
                      g.layers[l].weights.values(), lr, mu);
        momentum_step(net.layers[l].bias, net.momentum.layers[l].bias, g.layers[l].bias, lr, mu);
    }
    if (net.dropin) {
        auto& layer = *net.dropin;
        auto& velocity = net.momentum.dropin;
        for (std::size_t j = 0; j < layer.size(); ++j) {
            if (!layer.active(j)) {
                velocity[j] = 0.0;
                continue;
            }
            velocity[j] = mu * velocity[j] + g.dropin[j];
            layer.set_weight(j, layer.weight(j) - lr * velocity[j]);
        }
    }
}

}  // namespace

TrainResult train(Network net, const SplitDataset& data, const TrainConfig& cfg) {
    cfg.validate();
    net.validate();
    const Dataset& tr = data.train;
    if (tr.feature_count() != net.spec.input_dim() || data.val.feature_count() != net.spec.input_dim()) {
        throw ShapeError("dataset has " + std::to_string(tr.feature_count()) + " features, network expects " +
                         std::to_string(net.spec.input_dim()));
    }
    if (tr.size() == 0 || data.val.size() == 0) throw ShapeError("training and validation splits must be non-empty");
    check_labels(net, tr.X, tr.y);
    check_labels(net, data.val.X, data.val.y);
    if (net.momentum.layers.size() != net.layers.size()) {
        net.momentum = Network::initialize(net.spec, 0, net.dropin.has_value()).momentum;
    }
    const PenaltyConfig* penalty = cfg.penalty && cfg.penalty->any() ? &*cfg.penalty : nullptr;

    TrainResult result;
    result.best_val_accuracy = -1.0;
    Rng order_rng(derive_seed(cfg.seed, {0x0dde7}));
    std::vector<std::size_t> order(tr.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Label> batch_y;
    std::size_t stale = 0;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        order_rng.shuffle(std::span<std::size_t>(order));
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            const std::span<const std::size_t> idx(order.data() + start, count);
            const Dense2D batch_x = tr.X.select_rows(idx);
            batch_y.resize(count);
            for (std::size_t i = 0; i < count; ++i) batch_y[i] = tr.y[idx[i]];

            ObjectiveGradient og = objective_gradient(net, batch_x, batch_y, penalty);
            if (!std::isfinite(og.value)) throw DivergenceError(epoch + 1);
            loss_sum += og.value * static_cast<double>(count);
            apply_update(net, og.grad, cfg.learning_rate, cfg.momentum);
        }
        if (!net.all_finite()) throw DivergenceError(epoch + 1);

        const double val_acc = accuracy(net, data.val.X, data.val.y);
        result.history.push_back({loss_sum / static_cast<double>(tr.size()), val_acc});
        result.epochs_run = epoch + 1;
        if (val_acc > result.best_val_accuracy) {
            result.best_val_accuracy = val_acc;
            result.best_epoch = epoch;
            result.best_network = net;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            break;
        }
    }
    return result;
}

}  // namespace featrank
