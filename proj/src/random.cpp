#include "advgnn/random.hpp"

#include <vector>

namespace advgnn {

Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * stream.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (std::uint64_t s : stream) push(s);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace advgnn
