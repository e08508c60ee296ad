#include "featrank/data_io.hpp"

#include "featrank/errors.hpp"
#include "featrank/rng.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace featrank {

void Dataset::validate(bool require_all_classes) const {
    if (X.rows() == 0) throw ConfigError("dataset has no rows");
    if (y.size() != X.rows()) {
        throw ShapeError("dataset has " + std::to_string(X.rows()) + " rows but " +
                         std::to_string(y.size()) + " labels");
    }
    if (class_count == 0) throw ConfigError("dataset has no classes");
    std::vector<bool> seen(class_count, false);
    for (Label label : y) {
        if (label >= class_count) {
            throw ConfigError("label " + std::to_string(label) + " outside [0, " +
                              std::to_string(class_count) + ")");
        }
        seen[label] = true;
    }
    if (require_all_classes) {
        for (std::size_t c = 0; c < class_count; ++c) {
            if (!seen[c]) throw ConfigError("class " + std::to_string(c) + " has no rows");
        }
    }
    if (!X.all_finite()) throw ConfigError("dataset contains non-finite feature values");
}

Dataset Dataset::select_rows(std::span<const std::size_t> rows) const {
    Dataset out{X.select_rows(rows), {}, class_count};
    out.y.reserve(rows.size());
    for (std::size_t r : rows) out.y.push_back(y[r]);
    return out;
}

Dataset Dataset::select_features(std::span<const std::size_t> features) const {
    return Dataset{X.select_cols(features), y, class_count};
}

SplitDataset SplitDataset::select_features(std::span<const std::size_t> features) const {
    return SplitDataset{train.select_features(features), val.select_features(features),
                        test.select_features(features), warnings};
}

namespace {

std::vector<unsigned char> read_maybe_gzipped(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("file not found: " + path.string());
    }
    // gzread passes uncompressed files through unchanged.
    gzFile file = gzopen(path.string().c_str(), "rb");
    if (file == nullptr) throw ConfigError("cannot open " + path.string());
    std::vector<unsigned char> bytes;
    std::array<unsigned char, 1 << 16> chunk{};
    int got = 0;
    while ((got = gzread(file, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0) {
        bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + got);
    }
    const bool failed = got < 0;
    gzclose(file);
    if (failed) throw ParseError(path.string() + ": decompression failed", bytes.size());
    return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
    if (offset + 4 > bytes.size()) {
        throw ParseError(path.string() + ": header truncated at byte " + std::to_string(bytes.size()),
                         bytes.size());
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

struct IdxImages {
    std::size_t count, height, width;
    std::vector<unsigned char> bytes;  // includes the 16-byte header
};

IdxImages parse_idx_images(const std::filesystem::path& path) {
    IdxImages img{0, 0, 0, read_maybe_gzipped(path)};
    const std::uint32_t magic = read_be32(img.bytes, 0, path);
    if (magic != kImageMagic) {
        std::ostringstream msg;
        msg << path.string() << ": bad image magic 0x" << std::hex << magic << " at byte 0";
        throw ParseError(msg.str(), 0);
    }
    img.count = read_be32(img.bytes, 4, path);
    img.height = read_be32(img.bytes, 8, path);
    img.width = read_be32(img.bytes, 12, path);
    const std::size_t expected = 16 + img.count * img.height * img.width;
    if (img.bytes.size() < expected) {
        throw ParseError(path.string() + ": image data truncated at byte " +
                             std::to_string(img.bytes.size()) + " (expected " +
                             std::to_string(expected) + ")",
                         img.bytes.size());
    }
    return img;
}

}  // namespace

std::array<std::size_t, 3> idx_image_shape(const std::filesystem::path& images) {
    const IdxImages img = parse_idx_images(images);
    return {img.count, img.height, img.width};
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const IdxImages img = parse_idx_images(images);
    const std::vector<unsigned char> lab = read_maybe_gzipped(labels);
    const std::uint32_t magic = read_be32(lab, 0, labels);
    if (magic != kLabelMagic) {
        std::ostringstream msg;
        msg << labels.string() << ": bad label magic 0x" << std::hex << magic << " at byte 0";
        throw ParseError(msg.str(), 0);
    }
    const std::size_t label_count = read_be32(lab, 4, labels);
    if (label_count != img.count) {
        throw ParseError(labels.string() + ": " + std::to_string(label_count) + " labels (byte 4) for " +
                             std::to_string(img.count) + " images",
                         4);
    }
    if (lab.size() < 8 + label_count) {
        throw ParseError(labels.string() + ": label data truncated at byte " + std::to_string(lab.size()),
                         lab.size());
    }

    const std::size_t d = img.height * img.width;
    Dataset ds{Dense2D(img.count, d), std::vector<Label>(img.count), 0};
    auto values = ds.X.values();
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = img.bytes[16 + i] / 255.0;
    Label max_label = 0;
    for (std::size_t i = 0; i < label_count; ++i) {
        ds.y[i] = lab[8 + i];
        max_label = std::max(max_label, ds.y[i]);
    }
    ds.class_count = img.count == 0 ? 0 : std::size_t{max_label} + 1;
    ds.validate();
    return ds;
}

namespace {

std::vector<std::string_view> split_cells(std::string_view line, Delimiter delimiter) {
    std::vector<std::string_view> cells;
    auto trim = [](std::string_view s) {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string_view::npos) return std::string_view{};
        const auto last = s.find_last_not_of(" \t\r");
        return s.substr(first, last - first + 1);
    };
    if (delimiter == Delimiter::comma) {
        std::size_t start = 0;
        while (true) {
            const auto pos = line.find(',', start);
            cells.push_back(trim(line.substr(start, pos == std::string_view::npos ? line.npos : pos - start)));
            if (pos == std::string_view::npos) break;
            start = pos + 1;
        }
    } else {
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
            if (i == line.size()) break;
            const std::size_t start = i;
            while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
            cells.push_back(line.substr(start, i - start));
        }
    }
    return cells;
}

double parse_number(std::string_view cell, const std::filesystem::path& path, std::size_t line_no) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell '" +
                             std::string(cell) + "'",
                         line_no);
    }
    return value;
}

struct Table {
    std::vector<double> values;
    std::size_t cols = 0;
    std::vector<std::size_t> line_of_row;
};

Table read_table(const std::filesystem::path& path, Delimiter delimiter) {
    std::ifstream in(path);
    if (!in) throw ConfigError("file not found: " + path.string());
    Table table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_cells(line, delimiter);
        if (table.line_of_row.empty()) {
            table.cols = cells.size();
        } else if (cells.size() != table.cols) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                                 std::to_string(table.cols) + " columns, found " + std::to_string(cells.size()),
                             line_no);
        }
        for (auto cell : cells) table.values.push_back(parse_number(cell, path, line_no));
        table.line_of_row.push_back(line_no);
    }
    if (table.line_of_row.empty()) throw ParseError(path.string() + ": no data rows", line_no);
    return table;
}

std::vector<Label> to_labels(const std::vector<double>& codes, const std::vector<std::size_t>& lines,
                             LabelBase base, const std::filesystem::path& path, std::size_t& class_count) {
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] != std::floor(codes[i]) || codes[i] < 0 ||
            codes[i] > static_cast<double>(std::numeric_limits<Label>::max())) {
            throw ParseError(path.string() + ":" + std::to_string(lines[i]) + ": label is not a class code",
                             lines[i]);
        }
    }
    const double lowest = *std::min_element(codes.begin(), codes.end());
    const bool one_based = base == LabelBase::one || (base == LabelBase::automatic && lowest == 1.0);
    std::vector<Label> labels(codes.size());
    Label max_label = 0;
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (one_based && codes[i] < 1.0) {
            throw ParseError(path.string() + ":" + std::to_string(lines[i]) + ": class code 0 in 1-based labels",
                             lines[i]);
        }
        labels[i] = static_cast<Label>(codes[i]) - (one_based ? 1 : 0);
        max_label = std::max(max_label, labels[i]);
    }
    class_count = std::size_t{max_label} + 1;
    return labels;
}

}  // namespace

Dataset load_delimited(const DelimitedSource& source) {
    const Table table = read_table(source.features, source.delimiter);
    const std::size_t n = table.line_of_row.size();
    Dataset ds;
    std::vector<double> codes;
    std::vector<std::size_t> code_lines;
    const std::filesystem::path* label_path = &source.features;

    if (source.labels.empty()) {
        if (table.cols < 2) {
            throw ParseError(source.features.string() + ": need at least one feature column and a label column",
                             table.line_of_row.front());
        }
        const std::size_t d = table.cols - 1;
        std::vector<double> x;
        x.reserve(n * d);
        for (std::size_t r = 0; r < n; ++r) {
            const auto* row = table.values.data() + r * table.cols;
            x.insert(x.end(), row, row + d);
            codes.push_back(row[d]);
        }
        ds.X = Dense2D(n, d, std::move(x));
        code_lines = table.line_of_row;
    } else {
        const Table labels = read_table(source.labels, source.delimiter);
        label_path = &source.labels;
        if (labels.cols != 1) {
            throw ParseError(source.labels.string() + ": label file must have one column",
                             labels.line_of_row.front());
        }
        if (labels.line_of_row.size() != n) {
            throw ParseError(source.labels.string() + ": " + std::to_string(labels.line_of_row.size()) +
                                 " labels for " + std::to_string(n) + " feature rows",
                             labels.line_of_row.back());
        }
        ds.X = Dense2D(n, table.cols, table.values);
        codes = labels.values;
        code_lines = labels.line_of_row;
    }
    ds.y = to_labels(codes, code_lines, source.label_base, *label_path, ds.class_count);
    ds.validate();
    return ds;
}

void write_delimited(const Dataset& ds, const std::filesystem::path& features,
                     const std::filesystem::path& labels, Delimiter delimiter) {
    const char sep = delimiter == Delimiter::comma ? ',' : ' ';
    std::ofstream out(features);
    if (!out) throw ConfigError("cannot write " + features.string());
    std::ofstream label_out;
    if (!labels.empty()) {
        label_out.open(labels);
        if (!label_out) throw ConfigError("cannot write " + labels.string());
    }
    std::array<char, 64> buf{};
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (std::size_t c = 0; c < ds.feature_count(); ++c) {
            if (c > 0) out << sep;
            const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), ds.X(r, c));
            out.write(buf.data(), res.ptr - buf.data());
        }
        if (labels.empty()) {
            out << sep << ds.y[r];
        } else {
            label_out << ds.y[r] << '\n';
        }
        out << '\n';
    }
}

std::array<std::size_t, 3> split_sizes(std::size_t n, SplitRatios ratios) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9 || ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0) {
        throw ConfigError("split ratios must be positive and sum to 1");
    }
    const auto val = static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n)));
    const auto test = static_cast<std::size_t>(std::llround(ratios.test * static_cast<double>(n)));
    if (val == 0 || test == 0 || val + test >= n) {
        throw ConfigError("cannot split " + std::to_string(n) + " rows into three non-empty parts");
    }
    return {n - val - test, val, test};
}

SplitDataset split(const Dataset& ds, SplitRatios ratios, std::uint64_t seed) {
    const auto [n_train, n_val, n_test] = split_sizes(ds.size(), ratios);
    Rng rng(derive_seed(seed, {0x5917}));
    const std::vector<std::size_t> order = rng.permutation(ds.size());
    const std::span<const std::size_t> all(order);

    SplitDataset out{ds.select_rows(all.subspan(0, n_train)), ds.select_rows(all.subspan(n_train, n_val)),
                     ds.select_rows(all.subspan(n_train + n_val, n_test)), {}};
    std::vector<bool> seen(ds.class_count, false);
    for (Label label : out.train.y) seen[label] = true;
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        if (!seen[c]) out.warnings.push_back("class " + std::to_string(c) + " is absent from the training split");
    }
    return out;
}

Dataset subsample(const Dataset& ds, std::size_t rows, std::uint64_t seed) {
    if (rows == 0 || rows >= ds.size()) return ds;
    Rng rng(derive_seed(seed, {0x5ab5}));
    std::vector<std::size_t> order = rng.permutation(ds.size());
    order.resize(rows);
    std::sort(order.begin(), order.end());
    return ds.select_rows(order);
}

namespace {

void transform_columns(Dataset& ds, const std::vector<double>& shift, const std::vector<double>& scale) {
    for (std::size_t r = 0; r < ds.size(); ++r) {
        auto row = ds.X.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] = scale[c] == 0.0 ? 0.0 : (row[c] - shift[c]) / scale[c];
        }
    }
}

}  // namespace

SplitDataset normalize(const SplitDataset& splits, NormalizeMode mode) {
    SplitDataset out = splits;
    if (mode == NormalizeMode::none) return out;

    const Dataset& train = splits.train;
    const std::size_t d = train.feature_count();
    std::vector<double> shift(d, 0.0), scale(d, 0.0);
    if (mode == NormalizeMode::minmax) {
        for (std::size_t c = 0; c < d; ++c) {
            double lo = train.X(0, c), hi = train.X(0, c);
            for (std::size_t r = 1; r < train.size(); ++r) {
                lo = std::min(lo, train.X(r, c));
                hi = std::max(hi, train.X(r, c));
            }
            shift[c] = lo;
            scale[c] = hi - lo;
        }
    } else {
        const double n = static_cast<double>(train.size());
        for (std::size_t c = 0; c < d; ++c) {
            double mean = 0.0;
            for (std::size_t r = 0; r < train.size(); ++r) mean += train.X(r, c);
            mean /= n;
            double var = 0.0;
            bool constant = true;
            for (std::size_t r = 0; r < train.size(); ++r) {
                var += (train.X(r, c) - mean) * (train.X(r, c) - mean);
                constant = constant && train.X(r, c) == train.X(0, c);
            }
            shift[c] = mean;
            // The rounded mean of a constant column can differ from its value.
            scale[c] = constant ? 0.0 : std::sqrt(var / n);
        }
    }
    transform_columns(out.train, shift, scale);
    transform_columns(out.val, shift, scale);
    transform_columns(out.test, shift, scale);
    return out;
}

}  // namespace featrank
