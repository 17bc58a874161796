#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gvalign {

using Rng = std::mt19937_64;

// Seed splitting rule: child = splitmix64(parent ^ splitmix64(fnv1a64(label) + index)).
// Every consumer of randomness (scenario construction, initialisation, batching,
// mixup, pseudo-sampling, synthetic data) takes its own labelled child stream,
// so switching one stage on or off leaves the other streams untouched.

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view s);
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t parent, std::string_view label, std::uint64_t index = 0) {
    return Rng(derive_seed(parent, label, index));
}

}  // namespace gvalign
