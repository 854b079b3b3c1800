#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace flysnn::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;
using Block = std::array<std::uint32_t, 4>;

// Philox4x32-10 (Salmon et al., SC'11). Stateless: the output is a pure
// function of (counter, key), so any random value in the simulator can be
// addressed by its semantic coordinates instead of by draw order.
Block philox4x32(Counter ctr, Key key) noexcept;

inline Key key_from_seed(std::uint64_t seed) noexcept {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

// Domain tags occupy the last counter word so streams for different purposes
// never collide even when their other coordinates coincide.
enum class Domain : std::uint32_t {
    prototype = 1,
    gaussian_noise = 2,
    ou_key = 3,
    ou_step = 4,
    kc_fan_in = 5,
    kc_mbon_init = 6,
    val_split = 7,
    epoch_shuffle = 8,
    generic = 9,
};

// 53-bit uniform in [0, 1).
inline double to_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
}

// 53-bit uniform in (0, 1]; safe as a log argument.
inline double to_unit_open_low(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return static_cast<double>(bits + 1) * 0x1.0p-53;
}

// One U[0,1) draw addressed by (key, counter).
double uniform(Counter ctr, Key key) noexcept;

// One N(0,1) draw addressed by (key, counter), Box-Muller on one Philox block.
double standard_normal(Counter ctr, Key key) noexcept;

// Sequential view over a Philox stream: the counter's first word walks while
// the other three words stay fixed. Satisfies UniformRandomBitGenerator.
class CounterStream {
public:
    using result_type = std::uint32_t;

    CounterStream(Key key, std::uint32_t a, std::uint32_t b, Domain domain) noexcept
        : key_(key), base_{0, a, b, static_cast<std::uint32_t>(domain)} {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return 0xffffffffu; }

    result_type operator()() noexcept;

    // Unbiased integer in [0, bound) by rejection; bound must be > 0.
    std::uint32_t below(std::uint32_t bound) noexcept;

    double next_unit() noexcept;

private:
    Key key_;
    Counter base_;
    std::uint32_t block_index_ = 0;
    Block buffer_{};
    int used_ = 4;
};

// Fisher-Yates with CounterStream::below, so the permutation is identical on
// every standard library (std::shuffle is implementation-defined).
void shuffle(std::span<std::uint32_t> values, CounterStream& stream) noexcept;

// 64-bit FNV-1a, used for config hashes and file integrity tags.
std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ull) noexcept;

}  // namespace flysnn::rng
