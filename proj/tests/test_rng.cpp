#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "resgen/rng.hpp"

using namespace resgen;

TEST_CASE("same seed reproduces the stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
    Rng a(1), b(2);
    int same = 0;
    for (int i = 0; i < 100; ++i) same += a.next_u64() == b.next_u64();
    REQUIRE(same == 0);
}

TEST_CASE("uniform stays in [0, 1)") {
    Rng rng(7);
    double mn = 1.0, mx = 0.0;
    for (int i = 0; i < 100000; ++i) {
        double u = rng.uniform();
        mn = std::min(mn, u);
        mx = std::max(mx, u);
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
    }
    REQUIRE(mn < 0.01);
    REQUIRE(mx > 0.99);
}

TEST_CASE("uniform(lo, hi) respects bounds") {
    Rng rng(11);
    for (int i = 0; i < 10000; ++i) {
        double u = rng.uniform(-3.0, 2.5);
        REQUIRE(u >= -3.0);
        REQUIRE(u < 2.5);
    }
}

TEST_CASE("uniform_int covers the range without bias spikes") {
    Rng rng(5);
    std::vector<int> counts(10, 0);
    for (int i = 0; i < 100000; ++i) {
        std::uint64_t v = rng.uniform_int(10);
        REQUIRE(v < 10);
        ++counts[v];
    }
    for (int c : counts) {
        REQUIRE(c > 9000);
        REQUIRE(c < 11000);
    }
}

TEST_CASE("normal has roughly standard moments") {
    Rng rng(13);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    double mean = s / n;
    double var = s2 / n - mean * mean;
    REQUIRE(std::fabs(mean) < 0.02);
    REQUIRE(std::fabs(var - 1.0) < 0.03);
}

TEST_CASE("shuffle is a permutation and is seed-stable") {
    std::vector<int> v{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    std::vector<int> w = v;
    Rng a(3), b(3);
    a.shuffle(v);
    b.shuffle(w);
    REQUIRE(v == w);
    std::sort(w.begin(), w.end());
    REQUIRE(w == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("derive_seed separates substreams") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 50; ++a)
        for (std::uint64_t b = 0; b < 20; ++b) seen.insert(derive_seed(99, a, b));
    REQUIRE(seen.size() == 50 * 20);
    REQUIRE(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    REQUIRE(derive_seed(1, 2) == derive_seed(1, 2, 0, 0));
}
