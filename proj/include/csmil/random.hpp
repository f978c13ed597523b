#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace csmil {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a root seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// FNV-1a, used for stable digests of identifiers and configs.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

}  // namespace csmil
