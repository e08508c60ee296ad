#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace featrank {

/// Elementwise multiplicative input layer: output_j = weights_j * x_j.
/// Pruning a position sets its weight to exactly 0 and freezes it, which
/// removes feature j from everything downstream.
class DropInLayer {
public:
    DropInLayer() = default;
    /// All weights 1, all positions active.
    explicit DropInLayer(std::size_t features);

    std::size_t size() const noexcept { return weights_.size(); }
    std::size_t active_count() const noexcept;
    bool active(std::size_t j) const noexcept { return mask_[j]; }
    double weight(std::size_t j) const noexcept { return weights_[j]; }

    std::span<const double> weights() const noexcept { return weights_; }
    const std::vector<bool>& mask() const noexcept { return mask_; }

    /// Sets an active weight. Writes to masked positions are ignored.
    void set_weight(std::size_t j, double w) noexcept {
        if (mask_[j]) weights_[j] = w;
    }
    /// Zeroes and deactivates position j.
    void deactivate(std::size_t j) noexcept {
        weights_[j] = 0.0;
        mask_[j] = false;
    }

    std::vector<std::size_t> active_indices() const;

    friend bool operator==(const DropInLayer&, const DropInLayer&) = default;

private:
    std::vector<double> weights_;
    std::vector<bool> mask_;
};

/// Which sigmoid argument the weight-variance penalty uses.
enum class WvlForm {
    printed,   ///< sigmoid(20 w - 0.5)
    centered,  ///< sigmoid(20 (w - 0.5))
};

struct PenaltyConfig {
    double lambda = 1.0;  ///< l1 coefficient
    double gamma = 10.0;  ///< weight-variance coefficient
    bool enable_l1 = false;
    bool enable_wvl = false;
    WvlForm wvl_form = WvlForm::printed;

    bool any() const noexcept { return enable_l1 || enable_wvl; }
    /// Throws ConfigError on negative coefficients.
    void validate() const;
};

/// Throws ShapeError when x.size() != layer.size().
std::vector<double> apply(const DropInLayer& layer, std::span<const double> x);

/// Active positions with the k smallest |weight|, ties to the lower index,
/// least important first. Throws ConfigError if k exceeds the active count.
std::vector<std::size_t> smallest_active(const DropInLayer& layer, std::size_t k);

/// Deactivates the k active positions with the smallest |weight|.
DropInLayer prune_smallest(DropInLayer layer, std::size_t k);

/// lambda * sum of |w| over active positions.
double l1_penalty(const DropInLayer& layer, double lambda);
/// Adds lambda * sign(w) to grad for active positions (sign(0) = 0).
void add_l1_gradient(const DropInLayer& layer, double lambda, std::span<double> grad);

/// -gamma * population variance of sigmoid(...) over active weights.
/// Throws ConfigError when fewer than two positions are active.
double wvl_penalty(const DropInLayer& layer, double gamma, WvlForm form = WvlForm::printed);
void add_wvl_gradient(const DropInLayer& layer, double gamma, WvlForm form, std::span<double> grad);

/// Sum of the enabled penalty terms.
double penalty_value(const DropInLayer& layer, const PenaltyConfig& cfg);
/// Accumulates the gradient of penalty_value into grad (size() entries).
void add_penalty_gradient(const DropInLayer& layer, const PenaltyConfig& cfg, std::span<double> grad);

}  // namespace featrank
