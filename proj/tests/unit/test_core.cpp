#include "featrank/dense.hpp"
#include "featrank/errors.hpp"
#include "featrank/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace featrank;

TEST_CASE("dense: construction and shape errors") {
    const Dense2D m = Dense2D::from_rows({{1, 2, 3}, {4, 5, 6}});
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(1, 2) == 6);
    CHECK(m.row(1)[0] == 4);
    CHECK_THROWS_AS(Dense2D(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Dense2D::from_rows({{1, 2}, {3}}), ShapeError);
}

TEST_CASE("dense: row and column selection") {
    const Dense2D m = Dense2D::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
    const std::vector<std::size_t> rows{2, 0};
    const std::vector<std::size_t> cols{1};
    CHECK(m.select_rows(rows) == Dense2D::from_rows({{7, 8, 9}, {1, 2, 3}}));
    CHECK(m.select_cols(cols) == Dense2D::from_rows({{2}, {5}, {8}}));
    Dense2D bad = m;
    bad(0, 0) = std::nan("");
    CHECK_FALSE(bad.all_finite());
    CHECK(m.all_finite());
}

TEST_CASE("rng: reproducible streams") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
    CHECK(Rng(42).next() != c.next());
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}

TEST_CASE("rng: distributions stay in range and look right") {
    Rng rng(7);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform01();
        CHECK_UNARY(u >= 0.0 && u < 1.0);
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);

    std::vector<int> counts(5, 0);
    for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
    for (int c : counts) CHECK(std::abs(c - 10000) < 500);
}

TEST_CASE("rng: permutation is a permutation") {
    Rng rng(3);
    std::vector<std::size_t> p = rng.permutation(100);
    std::vector<std::size_t> sorted = p;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(100);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(sorted == iota);
    CHECK(p != iota);
}
