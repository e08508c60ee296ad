#include "featrank/dropin.hpp"

#include "featrank/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace featrank {

DropInLayer::DropInLayer(std::size_t features) : weights_(features, 1.0), mask_(features, true) {}

std::size_t DropInLayer::active_count() const noexcept {
    return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), true));
}

std::vector<std::size_t> DropInLayer::active_indices() const {
    std::vector<std::size_t> out;
    out.reserve(size());
    for (std::size_t j = 0; j < size(); ++j) {
        if (mask_[j]) out.push_back(j);
    }
    return out;
}

void PenaltyConfig::validate() const {
    if (!(lambda >= 0.0) || !(gamma >= 0.0)) {
        throw ConfigError("penalty coefficients must be >= 0");
    }
}

std::vector<double> apply(const DropInLayer& layer, std::span<const double> x) {
    if (x.size() != layer.size()) {
        throw ShapeError("drop-in apply: input has " + std::to_string(x.size()) +
                         " features, layer has " + std::to_string(layer.size()));
    }
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = layer.active(j) ? layer.weight(j) * x[j] : 0.0;
    return out;
}

std::vector<std::size_t> smallest_active(const DropInLayer& layer, std::size_t k) {
    std::vector<std::size_t> active = layer.active_indices();
    if (k > active.size()) {
        throw ConfigError("cannot prune " + std::to_string(k) + " of " +
                          std::to_string(active.size()) + " active drop-in weights");
    }
    std::stable_sort(active.begin(), active.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(layer.weight(a)) < std::abs(layer.weight(b));
    });
    active.resize(k);
    return active;
}

DropInLayer prune_smallest(DropInLayer layer, std::size_t k) {
    for (std::size_t j : smallest_active(layer, k)) layer.deactivate(j);
    return layer;
}

double l1_penalty(const DropInLayer& layer, double lambda) {
    double sum = 0.0;
    for (std::size_t j = 0; j < layer.size(); ++j) {
        if (layer.active(j)) sum += std::abs(layer.weight(j));
    }
    return lambda * sum;
}

void add_l1_gradient(const DropInLayer& layer, double lambda, std::span<double> grad) {
    for (std::size_t j = 0; j < layer.size(); ++j) {
        if (!layer.active(j)) continue;
        const double w = layer.weight(j);
        grad[j] += lambda * static_cast<double>((w > 0.0) - (w < 0.0));
    }
}

namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }

double wvl_argument(double w, WvlForm form) {
    return form == WvlForm::printed ? 20.0 * w - 0.5 : 20.0 * (w - 0.5);
}

struct SquashedWeights {
    std::vector<std::size_t> index;
    std::vector<double> value;
    double mean = 0.0;
};

SquashedWeights squash_active(const DropInLayer& layer, WvlForm form) {
    SquashedWeights s;
    s.index = layer.active_indices();
    if (s.index.size() < 2) {
        throw ConfigError("weight variance penalty needs at least 2 active drop-in weights, have " +
                          std::to_string(s.index.size()));
    }
    s.value.reserve(s.index.size());
    for (std::size_t j : s.index) s.value.push_back(sigmoid(wvl_argument(layer.weight(j), form)));
    s.mean = std::accumulate(s.value.begin(), s.value.end(), 0.0) / static_cast<double>(s.value.size());
    return s;
}

}  // namespace

double wvl_penalty(const DropInLayer& layer, double gamma, WvlForm form) {
    const SquashedWeights s = squash_active(layer, form);
    double var = 0.0;
    for (double v : s.value) var += (v - s.mean) * (v - s.mean);
    var /= static_cast<double>(s.value.size());
    return -gamma * var;
}

void add_wvl_gradient(const DropInLayer& layer, double gamma, WvlForm form, std::span<double> grad) {
    const SquashedWeights s = squash_active(layer, form);
    const double m = static_cast<double>(s.value.size());
    // d var / d v_j = 2 (v_j - mean) / m ; d v_j / d w_j = 20 v_j (1 - v_j)
    for (std::size_t i = 0; i < s.index.size(); ++i) {
        const double v = s.value[i];
        grad[s.index[i]] += -gamma * 2.0 * (v - s.mean) / m * 20.0 * v * (1.0 - v);
    }
}

double penalty_value(const DropInLayer& layer, const PenaltyConfig& cfg) {
    double total = 0.0;
    if (cfg.enable_l1) total += l1_penalty(layer, cfg.lambda);
    if (cfg.enable_wvl) total += wvl_penalty(layer, cfg.gamma, cfg.wvl_form);
    return total;
}

void add_penalty_gradient(const DropInLayer& layer, const PenaltyConfig& cfg, std::span<double> grad) {
    if (grad.size() != layer.size()) throw ShapeError("penalty gradient: size mismatch");
    if (cfg.enable_l1) add_l1_gradient(layer, cfg.lambda, grad);
    if (cfg.enable_wvl) add_wvl_gradient(layer, cfg.gamma, cfg.wvl_form, grad);
}

}  // namespace featrank
