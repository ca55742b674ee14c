#include <doctest.h>

#include <cmath>
#include <set>
#include <stdexcept>

#include <metapriv/rng.hpp>
#include <metapriv/tensor.hpp>

using namespace metapriv;

TEST_CASE("tensor construction and shape") {
    Tensor t({2, 3});
    CHECK(t.rank() == 2);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.size() == 6);
    for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == 0.0);

    Tensor s = Tensor::scalar(2.5);
    CHECK(s.rank() == 0);
    CHECK(s.size() == 1);
    CHECK(s[0] == 2.5);

    Tensor f = Tensor::full({4}, 1.25);
    CHECK(f.rank() == 1);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(f[i] == 1.25);

    CHECK(shape_size({2, 3, 4}) == 24);
    CHECK(shape_size({}) == 1);
}

TEST_CASE("tensor data constructor checks length") {
    Tensor ok({2, 2}, {1, 2, 3, 4});
    CHECK(ok.at(1, 0) == 3.0);
    CHECK_THROWS_AS((Tensor({2, 2}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("2-d accessors reject other ranks") {
    Tensor v({3});
    CHECK_THROWS_AS(v.rows(), std::logic_error);
    CHECK_THROWS_AS(v.at(0, 0), std::logic_error);
}

TEST_CASE("at uses row-major order") {
    Tensor t({2, 3}, {0, 1, 2, 3, 4, 5});
    CHECK(t.at(0, 2) == 2.0);
    CHECK(t.at(1, 0) == 3.0);
    t.at(1, 2) = 9.0;
    CHECK(t[5] == 9.0);
}

TEST_CASE("same_shape and shape_str") {
    Tensor a({2, 3}), b({2, 3}), c({3, 2});
    CHECK(a.same_shape(b));
    CHECK(!a.same_shape(c));
    CHECK(a.shape_str() == "[2x3]");
}

TEST_CASE("finiteness checks") {
    Tensor t({2});
    CHECK(t.all_finite());
    require_finite(t, "clean");
    t[1] = std::nan("");
    CHECK(!t.all_finite());
    CHECK_THROWS_WITH_AS(require_finite(t, "poisoned"), doctest::Contains("poisoned"), std::runtime_error);
}

TEST_CASE("rng streams are reproducible") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const std::uint64_t x = a.next_u64();
        all_equal = all_equal && x == b.next_u64();
        any_diff = any_diff || x != c.next_u64();
    }
    CHECK(all_equal);
    CHECK(any_diff);
}

TEST_CASE("uniform stays in range") {
    Rng r(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(-2.0, 3.0);
        CHECK(u >= -2.0);
        CHECK(u < 3.0);
    }
}

TEST_CASE("uniform_int bounds and errors") {
    Rng r(11);
    std::set<int> seen;
    for (int i = 0; i < 300; ++i) {
        const int k = r.uniform_int(5);
        CHECK(k >= 0);
        CHECK(k < 5);
        seen.insert(k);
    }
    CHECK(seen.size() == 5);
    CHECK_THROWS_AS(r.uniform_int(0), std::invalid_argument);
}

TEST_CASE("normal moments are roughly right") {
    Rng r(13);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal(1.0, 2.0);
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
    CHECK(var == doctest::Approx(4.0).epsilon(0.05));
}

TEST_CASE("shuffle permutes without losing elements") {
    Rng r(17);
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<int> shuffled = v;
    r.shuffle(shuffled);
    CHECK(std::set<int>(shuffled.begin(), shuffled.end()) == std::set<int>(v.begin(), v.end()));
}

TEST_CASE("derive_seed separates substreams") {
    std::set<std::uint64_t> seeds;
    for (std::uint64_t a = 0; a < 10; ++a)
        for (std::uint64_t b = 0; b < 10; ++b) seeds.insert(derive_seed(1, a, b));
    CHECK(seeds.size() == 100);
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));
}
