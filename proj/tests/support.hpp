#pragma once

#include "featrank/data_io.hpp"
#include "featrank/nn.hpp"
#include "featrank/rng.hpp"

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace featrank::testing {

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "featrank_tests" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Two Gaussian blobs centred at (-2, -2) and (2, 2), unit variance.
inline Dataset blobs(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds{Dense2D(n, 2), std::vector<Label>(n), 2};
    for (std::size_t i = 0; i < n; ++i) {
        const Label c = static_cast<Label>(i % 2);
        const double centre = c == 0 ? -2.0 : 2.0;
        ds.X(i, 0) = centre + rng.normal();
        ds.X(i, 1) = centre + rng.normal();
        ds.y[i] = c;
    }
    return ds;
}

/// Standard normal features; the label is 1 when most informative features
/// are positive (ties give 0).
inline Dataset vote_dataset(std::size_t n, std::size_t d, const std::vector<std::size_t>& informative,
                            std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds{Dense2D(n, d), std::vector<Label>(n), 2};
    for (std::size_t i = 0; i < n; ++i) {
        int votes = 0;
        for (std::size_t j = 0; j < d; ++j) ds.X(i, j) = rng.normal();
        for (std::size_t j : informative) votes += (ds.X(i, j) > 0) - (ds.X(i, j) < 0);
        ds.y[i] = votes > 0 ? 1 : 0;
    }
    return ds;
}

/// Uniform features in [-1, 1) with random labels in [0, classes).
inline Dataset noise_dataset(std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds{Dense2D(n, d), std::vector<Label>(n), classes};
    for (double& v : ds.X.values()) v = rng.uniform(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) ds.y[i] = static_cast<Label>(i % classes);
    return ds;
}

/// Network with every parameter drawn uniformly from [-scale, scale).
inline Network random_network(const NetworkSpec& spec, std::uint64_t seed, bool with_dropin = false,
                              double scale = 1.0) {
    Network net = Network::initialize(spec, seed, with_dropin);
    Rng rng(seed ^ 0xabcdefULL);
    for (DenseLayer& layer : net.layers) {
        for (double& w : layer.weights.values()) w = rng.uniform(-scale, scale);
        for (double& b : layer.bias) b = rng.uniform(-scale, scale);
    }
    if (net.dropin) {
        for (std::size_t j = 0; j < net.dropin->size(); ++j) net.dropin->set_weight(j, rng.uniform(-1.5, 1.5));
    }
    return net;
}

}  // namespace featrank::testing
