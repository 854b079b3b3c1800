#include <algorithm>
#include <cmath>
#include <numeric>
#include <string_view>
#include <vector>

#include "doctest.h"
#include "flysnn/rng.hpp"

using namespace flysnn::rng;

TEST_CASE("philox4x32-10 known-answer vectors") {
    // Published Random123 test vectors.
    CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
          Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
          Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("fnv1a64 reference values") {
    auto h = [](std::string_view s) {
        return fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
    };
    CHECK(h("") == 0xcbf29ce484222325ull);
    CHECK(h("a") == 0xaf63dc4c8601ec8cull);
    CHECK(h("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("uniform and normal draws are addressed, not sequenced") {
    const Key k = key_from_seed(42);
    const double a = uniform({1, 2, 3, 4}, k);
    standard_normal({9, 9, 9, 9}, k);
    CHECK(uniform({1, 2, 3, 4}, k) == a);
    CHECK(uniform({1, 2, 3, 5}, k) != a);
    CHECK(uniform({1, 2, 3, 4}, key_from_seed(43)) != a);
}

TEST_CASE("uniform lies in [0,1) and normal has unit moments") {
    const Key k = key_from_seed(7);
    double sum = 0.0, sum2 = 0.0, usum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = uniform({static_cast<std::uint32_t>(i), 0, 0, 1}, k);
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        usum += u;
        const double z = standard_normal({static_cast<std::uint32_t>(i), 0, 0, 2}, k);
        sum += z;
        sum2 += z * z;
    }
    CHECK(usum / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("unit conversions hit their documented endpoints") {
    CHECK(to_unit(0, 0) == 0.0);
    CHECK(to_unit(0xffffffffu, 0xffffffffu) < 1.0);
    CHECK(to_unit_open_low(0, 0) > 0.0);
    CHECK(to_unit_open_low(0xffffffffu, 0xffffffffu) == 1.0);
}

TEST_CASE("below() is unbiased enough and stays in range") {
    CounterStream s(key_from_seed(3), 0, 0, Domain::generic);
    std::vector<int> hist(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        const auto v = s.below(7);
        REQUIRE(v < 7u);
        ++hist[v];
    }
    for (int c : hist) CHECK(std::abs(c - n / 7) < 400);
}

TEST_CASE("shuffle yields a permutation determined by the stream coordinates") {
    std::vector<std::uint32_t> a(100), b(100);
    std::iota(a.begin(), a.end(), 0u);
    std::iota(b.begin(), b.end(), 0u);
    CounterStream s1(key_from_seed(5), 1, 2, Domain::epoch_shuffle);
    CounterStream s2(key_from_seed(5), 1, 2, Domain::epoch_shuffle);
    shuffle(a, s1);
    shuffle(b, s2);
    CHECK(a == b);
    std::vector<std::uint32_t> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (std::uint32_t i = 0; i < 100; ++i) CHECK(sorted[i] == i);
    std::vector<std::uint32_t> c(100);
    std::iota(c.begin(), c.end(), 0u);
    CounterStream s3(key_from_seed(5), 1, 3, Domain::epoch_shuffle);
    shuffle(c, s3);
    CHECK(c != a);
}
