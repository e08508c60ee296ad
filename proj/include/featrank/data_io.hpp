#pragma once

#include "featrank/dense.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace featrank {

using Label = std::uint32_t;

/// Features plus integer class labels in [0, class_count).
struct Dataset {
    Dense2D X;
    std::vector<Label> y;
    std::size_t class_count = 0;

    std::size_t size() const noexcept { return X.rows(); }
    std::size_t feature_count() const noexcept { return X.cols(); }

    /// Checks shapes, label range and finiteness. With `require_all_classes`
    /// every class in [0, class_count) must occur at least once.
    void validate(bool require_all_classes = true) const;

    Dataset select_rows(std::span<const std::size_t> rows) const;
    Dataset select_features(std::span<const std::size_t> features) const;
};

struct SplitDataset {
    Dataset train;
    Dataset val;
    Dataset test;
    /// Non-fatal findings from splitting, e.g. a class missing from train.
    std::vector<std::string> warnings;

    std::size_t feature_count() const noexcept { return train.feature_count(); }
    std::size_t class_count() const noexcept { return train.class_count; }

    SplitDataset select_features(std::span<const std::size_t> features) const;
};

/// Reads an IDX image file (magic 0x00000803) and label file (0x00000801).
/// Either file may be gzip-compressed. Pixels are flattened row-major and
/// divided by 255. Errors carry the byte offset of the problem.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Raw IDX image geometry: (count, height, width).
std::array<std::size_t, 3> idx_image_shape(const std::filesystem::path& images);

enum class Delimiter { comma, whitespace };

/// How integer class codes in text files map to internal labels.
enum class LabelBase {
    automatic,  ///< subtract 1 when the smallest code is 1
    zero,
    one,
};

struct DelimitedSource {
    std::filesystem::path features;
    /// Separate one-column label file; when empty the last column of
    /// `features` holds the label.
    std::filesystem::path labels;
    Delimiter delimiter = Delimiter::comma;
    LabelBase label_base = LabelBase::automatic;
};

/// Rectangular numeric text table. Errors carry the 1-based line number.
Dataset load_delimited(const DelimitedSource& source);

/// Writes X (and y, as the last column when `labels` is empty) so that
/// load_delimited reproduces every value bit for bit.
void write_delimited(const Dataset& ds, const std::filesystem::path& features,
                     const std::filesystem::path& labels = {}, Delimiter delimiter = Delimiter::comma);

struct SplitRatios {
    double train = 0.6;
    double val = 0.2;
    double test = 0.2;
};

/// Seeded uniform shuffle followed by contiguous cuts. Validation and test
/// sizes are round(ratio * n); training takes the remainder.
SplitDataset split(const Dataset& ds, SplitRatios ratios, std::uint64_t seed);

/// Split sizes (train, val, test) that split() would produce for n rows.
std::array<std::size_t, 3> split_sizes(std::size_t n, SplitRatios ratios);

/// A seeded subset of `rows` rows kept in their original order; the whole
/// dataset when rows == 0 or rows >= size().
Dataset subsample(const Dataset& ds, std::size_t rows, std::uint64_t seed);

enum class NormalizeMode { none, minmax, zscore };

/// Statistics come from the training split only and are applied to all
/// three splits. Zero-range / zero-variance features map to 0.
SplitDataset normalize(const SplitDataset& splits, NormalizeMode mode);

}  // namespace featrank
