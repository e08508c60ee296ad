#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace featrank {

/// Row-major matrix of doubles. The numeric carrier for data sets, layer
/// weights and activations.
class Dense2D {
public:
    Dense2D() = default;
    Dense2D(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// Throws ShapeError unless data.size() == rows * cols.
    Dense2D(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Dense2D from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept {
        return {data_.data() + r * cols_, cols_};
    }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    bool all_finite() const noexcept;

    /// Rows picked by `indices`, in that order.
    Dense2D select_rows(std::span<const std::size_t> indices) const;
    /// Columns picked by `indices`, in that order.
    Dense2D select_cols(std::span<const std::size_t> indices) const;

    friend bool operator==(const Dense2D&, const Dense2D&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

}  // namespace featrank
