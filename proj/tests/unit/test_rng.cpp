#include "doctest.h"

#include <cmath>
#include <set>
#include <vector>

#include "mkvrisk/rng.hpp"

using mkv::CounterRng;
using mkv::Philox4x32;
using mkv::StreamTag;

TEST_CASE("philox known answers") {
    using C = Philox4x32::Counter;
    using K = Philox4x32::Key;
    CHECK(Philox4x32::generate(C{0, 0, 0, 0}, K{0, 0}) == C{0x6627e8d5U, 0xe169c58dU, 0xbc57ac4cU, 0x9b00dbd8U});
    CHECK(Philox4x32::generate(C{0xffffffffU, 0xffffffffU, 0xffffffffU, 0xffffffffU}, K{0xffffffffU, 0xffffffffU}) ==
          C{0x408f276dU, 0x41c83b0eU, 0xa20bc7c6U, 0x6d5451fdU});
    CHECK(Philox4x32::generate(C{0x243f6a88U, 0x85a308d3U, 0x13198a2eU, 0x03707344U}, K{0xa4093822U, 0x299f31d0U}) ==
          C{0xd16cfe09U, 0x94fdccebU, 0x5001e420U, 0x24126ea1U});
}

TEST_CASE("streams are addressable and distinct") {
    const CounterRng rng{42};
    std::vector<double> a(6), b(6), c(6);
    rng.normals(7, 3, StreamTag::diffusion, a);
    rng.normals(7, 3, StreamTag::diffusion, b);
    CHECK(a == b);
    rng.normals(7, 3, StreamTag::initial, c);
    CHECK(a != c);
    rng.normals(8, 3, StreamTag::diffusion, c);
    CHECK(a != c);
    CHECK(CounterRng{43}.raw(7, 3, StreamTag::diffusion, 0) != rng.raw(7, 3, StreamTag::diffusion, 0));
    // high bits of index and step reach the counter
    CHECK(rng.raw(std::uint64_t{1} << 33, 0, StreamTag::diffusion, 0) != rng.raw(0, 0, StreamTag::diffusion, 0));
    CHECK(rng.raw(0, std::uint64_t{1} << 33, StreamTag::diffusion, 0) != rng.raw(0, 0, StreamTag::diffusion, 0));
}

TEST_CASE("normal moments") {
    const CounterRng rng{2024};
    const std::size_t n = 200000;
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    std::vector<double> z(2);
    for (std::size_t i = 0; i < n / 2; ++i) {
        rng.normals(i, 0, StreamTag::experiment, z);
        for (double v : z) {
            s1 += v;
            s2 += v * v;
            s4 += v * v * v * v;
        }
    }
    CHECK(std::abs(s1 / n) < 4.0 / std::sqrt(double(n)));
    CHECK(std::abs(s2 / n - 1.0) < 4.0 * std::sqrt(2.0 / n));
    CHECK(std::abs(s4 / n - 3.0) < 0.1);
}

TEST_CASE("uniforms stay inside the open interval") {
    CHECK(CounterRng::to_unit(0) > 0.0);
    CHECK(CounterRng::to_unit(0xffffffffU) < 1.0);
}

TEST_CASE("derived seeds differ") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t a = 0; a < 50; ++a) {
        for (std::uint64_t b = 0; b < 4; ++b) seen.insert(mkv::derive_seed(11, a, b));
    }
    CHECK(seen.size() == 200);
}
