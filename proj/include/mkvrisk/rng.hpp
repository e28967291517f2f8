#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace mkv {

/// Philox4x32-10 block cipher (Salmon et al., Random123). Stateless: every
/// (key, counter) pair maps to four independent 32-bit words.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter generate(Counter ctr, Key key) {
        for (int round = 0; round < 10; ++round) {
            if (round > 0) {
                key[0] += kWeyl0;
                key[1] += kWeyl1;
            }
            const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
            const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
            const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
            const auto lo0 = static_cast<std::uint32_t>(p0);
            const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
            const auto lo1 = static_cast<std::uint32_t>(p1);
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        }
        return ctr;
    }

private:
    static constexpr std::uint32_t kMul0 = 0xD2511F53U;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57U;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9U;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85U;
};

/// Stream tags keep the noise families of one seed disjoint.
enum class StreamTag : std::uint32_t {
    diffusion = 0,
    initial = 1,
    probe = 2,
    optimizer = 3,
    experiment = 4,
};

/// SplitMix64 finalizer; used to derive child seeds.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(seed ^ mix64(a + 0x51ED27ULL)) ^ mix64(b + 0xA5A5A5ULL));
}

/// Uniform doubles in (0,1) and standard normals addressed by
/// (seed, index, step, tag, block); four values per block.
struct CounterRng {
    std::uint64_t seed = 0;

    Philox4x32::Counter raw(std::uint64_t index, std::uint64_t step, StreamTag tag, std::uint32_t block) const {
        const Philox4x32::Counter ctr{static_cast<std::uint32_t>(index),
                                      static_cast<std::uint32_t>(step),
                                      static_cast<std::uint32_t>(tag) | (static_cast<std::uint32_t>(index >> 32) << 8),
                                      block | (static_cast<std::uint32_t>(step >> 32) << 16)};
        const Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
        return Philox4x32::generate(ctr, key);
    }

    static double to_unit(std::uint32_t w) { return (static_cast<double>(w) + 0.5) * 0x1p-32; }

    void uniforms(std::uint64_t index, std::uint64_t step, StreamTag tag, std::span<double> out) const {
        for (std::size_t i = 0; i < out.size(); i += 4) {
            const auto r = raw(index, step, tag, static_cast<std::uint32_t>(i / 4));
            for (std::size_t j = 0; j < 4 && i + j < out.size(); ++j) out[i + j] = to_unit(r[j]);
        }
    }

    /// Box-Muller on pairs of 32-bit uniforms.
    void normals(std::uint64_t index, std::uint64_t step, StreamTag tag, std::span<double> out) const {
        for (std::size_t i = 0; i < out.size(); i += 4) {
            const auto r = raw(index, step, tag, static_cast<std::uint32_t>(i / 4));
            for (std::size_t pair = 0; pair < 2; ++pair) {
                const std::size_t at = i + 2 * pair;
                if (at >= out.size()) break;
                const double radius = std::sqrt(-2.0 * std::log(to_unit(r[2 * pair])));
                const double angle = 2.0 * std::numbers::pi * to_unit(r[2 * pair + 1]);
                out[at] = radius * std::cos(angle);
                if (at + 1 < out.size()) out[at + 1] = radius * std::sin(angle);
            }
        }
    }
};

}  // namespace mkv
