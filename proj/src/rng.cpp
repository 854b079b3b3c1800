#include "flysnn/rng.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace flysnn::rng {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void philox_round(Counter& ctr, const Key& key) noexcept {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
           static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
           static_cast<std::uint32_t>(p0)};
}

}  // namespace

Block philox4x32(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        philox_round(ctr, key);
    }
    return ctr;
}

double uniform(Counter ctr, Key key) noexcept {
    const Block b = philox4x32(ctr, key);
    return to_unit(b[0], b[1]);
}

double standard_normal(Counter ctr, Key key) noexcept {
    const Block b = philox4x32(ctr, key);
    const double u1 = to_unit_open_low(b[0], b[1]);
    const double u2 = to_unit(b[2], b[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

CounterStream::result_type CounterStream::operator()() noexcept {
    if (used_ == 4) {
        Counter ctr = base_;
        ctr[0] = block_index_++;
        buffer_ = philox4x32(ctr, key_);
        used_ = 0;
    }
    return buffer_[static_cast<std::size_t>(used_++)];
}

std::uint32_t CounterStream::below(std::uint32_t bound) noexcept {
    // Reject the top partial bucket so every residue is equally likely.
    const std::uint32_t limit = 0xffffffffu - (0xffffffffu % bound + 1) % bound;
    std::uint32_t x = (*this)();
    while (x > limit) {
        x = (*this)();
    }
    return x % bound;
}

double CounterStream::next_unit() noexcept {
    const std::uint32_t hi = (*this)();
    const std::uint32_t lo = (*this)();
    return to_unit(hi, lo);
}

void shuffle(std::span<std::uint32_t> values, CounterStream& stream) noexcept {
    for (std::size_t i = values.size(); i > 1; --i) {
        const std::uint32_t j = stream.below(static_cast<std::uint32_t>(i));
        std::swap(values[i - 1], values[j]);
    }
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t basis) noexcept {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace flysnn::rng
