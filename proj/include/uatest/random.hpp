#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>

namespace uatest {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; mixes a master seed with a task index so that
/// per-task streams do not depend on scheduling order.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t z = master + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Worker cap for parallel loops; 0 means hardware concurrency.
void set_max_threads(unsigned threads);
unsigned max_threads();

/// Run body(i) for i in [0, n). Each index is processed exactly once; bodies
/// must only write to per-index state.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace uatest
