#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace promptfolio {

using Engine = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a(std::string_view s);

// Counter-based sub-stream: (master, label, index) -> seed. Adding a new label never shifts existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0);

Engine make_engine(std::uint64_t master, std::string_view label, std::uint64_t index = 0);

}  // namespace promptfolio
