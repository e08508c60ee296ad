#pragma once

#include "featrank/data_io.hpp"
#include "featrank/dense.hpp"
#include "featrank/dropin.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace featrank {

enum class Activation { relu, tanh };

/// Layer widths from input to output; the activation applies to every
/// hidden layer and the output is a softmax.
struct NetworkSpec {
    std::vector<std::size_t> layer_sizes;
    Activation activation = Activation::relu;

    std::size_t input_dim() const { return layer_sizes.front(); }
    std::size_t class_count() const { return layer_sizes.back(); }
    std::size_t dense_layers() const { return layer_sizes.size() - 1; }

    /// Throws ConfigError on fewer than two sizes or a zero size.
    void validate() const;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Fully connected layer; weights are fan_in x fan_out.
struct DenseLayer {
    Dense2D weights;
    std::vector<double> bias;

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Momentum-SGD velocity, shaped like the trainable parameters.
struct Momentum {
    std::vector<DenseLayer> layers;
    std::vector<double> dropin;

    friend bool operator==(const Momentum&, const Momentum&) = default;
};

struct Network {
    NetworkSpec spec;
    std::vector<DenseLayer> layers;
    /// Optional elementwise input layer in front of layers[0].
    std::optional<DropInLayer> dropin;
    Momentum momentum;

    /// He-uniform weights, zero biases, zero velocity. The drop-in layer,
    /// when requested, starts at all ones.
    static Network initialize(const NetworkSpec& spec, std::uint64_t seed, bool with_dropin = false);

    /// Throws ShapeError when parameter shapes disagree with spec.
    void validate() const;
    bool all_finite() const;

    friend bool operator==(const Network&, const Network&) = default;
};

/// Gradient of the training objective, shaped like the parameters.
struct Gradients {
    std::vector<DenseLayer> layers;
    std::vector<double> dropin;
};

struct TrainConfig {
    std::size_t max_epochs = 20000;
    std::size_t patience = 2000;
    double learning_rate = 0.001;
    double momentum = 0.9;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    /// Penalties on the drop-in weights; ignored for networks without one.
    std::optional<PenaltyConfig> penalty;

    /// Throws ConfigError when a field is out of range.
    void validate() const;
};

struct EpochRecord {
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    Network best_network;
    double best_val_accuracy = 0.0;
    /// 0-based epoch that produced best_network.
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::vector<EpochRecord> history;
};

/// Class probabilities, one row per input row.
Dense2D forward(const Network& net, const Dense2D& batch);

/// Argmax class per row; ties go to the lowest class index.
std::vector<Label> predict(const Network& net, const Dense2D& batch);

/// Fraction of rows whose predicted class equals the label. Throws on empty X.
double accuracy(const Network& net, const Dense2D& X, std::span<const Label> y);

/// Mean cross-entropy over the batch plus the drop-in penalty (when given
/// and the network has a drop-in layer).
double objective(const Network& net, const Dense2D& X, std::span<const Label> y,
                 const PenaltyConfig* penalty = nullptr);

struct ObjectiveGradient {
    double value = 0.0;
    Gradients grad;
};

/// objective() and its gradient with respect to every trainable parameter.
/// Masked drop-in positions get exactly zero gradient.
ObjectiveGradient objective_gradient(const Network& net, const Dense2D& X, std::span<const Label> y,
                                     const PenaltyConfig* penalty = nullptr);

/// d p_target / d x for a single input row.
std::vector<double> input_gradient(const Network& net, std::span<const double> x, std::size_t target_class);

/// Row i holds d p_{targets[i]} / d X(i, :).
Dense2D input_gradients(const Network& net, const Dense2D& X, std::span<const Label> targets);

/// Momentum SGD on data.train with early stopping on data.val accuracy.
/// A new best requires strictly higher validation accuracy; training stops
/// after `patience` epochs without one. Bit-reproducible for a given seed.
TrainResult train(Network net, const SplitDataset& data, const TrainConfig& cfg);

}  // namespace featrank
