#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace obstransfer {

// Shape or dimension disagreement between two operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// NaN or Inf produced where a finite value is required.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Operation called in a state where it is not allowed (e.g. step after done).
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

/// SplitMix64 finalizer. Used to derive independent seeds for per-run streams.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept
{
    return mix_seed(mix_seed(base) ^ mix_seed(stream + 0x632be59bd9b4e019ULL));
}

}  // namespace obstransfer
