#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace advgnn {

using Rng = std::mt19937_64;

// Engine seeded from a base seed plus stream identifiers, so derived streams
// (per restart, per sample/start/epoch) never share state.
Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

}  // namespace advgnn
