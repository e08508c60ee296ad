#include "featrank/dense.hpp"

#include "featrank/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace featrank {

Dense2D::Dense2D(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Dense2D::Dense2D(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("Dense2D: " + std::to_string(data_.size()) + " values for a " +
                         std::to_string(rows) + "x" + std::to_string(cols) + " matrix");
    }
}

Dense2D Dense2D::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw ShapeError("Dense2D::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Dense2D(r, c, std::move(data));
}

bool Dense2D::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Dense2D Dense2D::select_rows(std::span<const std::size_t> indices) const {
    Dense2D out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows_) throw ShapeError("Dense2D::select_rows: index out of range");
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[i] * cols_), cols_,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }
    return out;
}

Dense2D Dense2D::select_cols(std::span<const std::size_t> indices) const {
    for (std::size_t idx : indices) {
        if (idx >= cols_) throw ShapeError("Dense2D::select_cols: index out of range");
    }
    Dense2D out(rows_, indices.size());
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t j = 0; j < indices.size(); ++j) out(r, j) = (*this)(r, indices[j]);
    }
    return out;
}

}  // namespace featrank
